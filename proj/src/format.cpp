#include "relpos/format.hpp"

#include <charconv>
#include <sstream>

namespace relpos {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string matrix_csv(const Tensor& m, const std::string& row_label, const std::string& col_prefix) {
    std::ostringstream os;
    os << row_label;
    for (std::size_t c = 0; c < m.cols(); ++c) os << ',' << col_prefix << c;
    os << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        os << r;
        for (double v : m.row(r)) os << ',' << format_double(v);
        os << '\n';
    }
    return os.str();
}

}  // namespace relpos
