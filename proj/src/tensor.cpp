#include "goalcap/tensor.hpp"

namespace goalcap::detail {

bool& grad_enabled_flag() {
    static thread_local bool f = true;
    return f;
}

bool& finite_checks_flag() {
    static thread_local bool f = true;
    return f;
}

}  // namespace goalcap::detail
