#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vitssp/error.hpp"

namespace vitssp {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

inline DType dtype_from_name(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

// Process-wide default precision, set once by the CLI before any tensor is made.
DType default_dtype();
void set_default_dtype(DType dt);

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace vitssp
