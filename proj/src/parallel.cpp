#include "tna/parallel.hpp"

#include <cstdlib>
#include <string>

namespace tna {

int default_workers() {
    if (const char* env = std::getenv("TNA_WORKERS")) {
        try {
            const int value = std::stoi(env);
            if (value > 0) return value;
        } catch (const std::exception&) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace tna
