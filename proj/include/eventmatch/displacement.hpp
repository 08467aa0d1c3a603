#pragma once

#include <cstddef>
#include <string>

#include "eventmatch/tensor.hpp"

namespace eventmatch {

enum class MatchMode { Flow, Disparity };

const char* to_string(MatchMode mode);
MatchMode match_mode_from_string(const std::string& s);

// Per-pixel correspondence offset. Flow fields are H x W x 2 (u then v, in
// pixels of the field's own grid); disparity fields are H x W x 1 and
// non-negative, with the right-image column x_R = x_L - D.
struct DisplacementField {
  MatchMode mode = MatchMode::Flow;
  Tensor data;
  Mask valid;
  std::size_t scale = 1;

  static DisplacementField zeros(MatchMode mode, std::size_t height, std::size_t width,
                                 std::size_t scale = 1);

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
  std::size_t channels() const { return data.dim(2); }
};

inline std::size_t channels_for(MatchMode mode) { return mode == MatchMode::Flow ? 2 : 1; }

// File form: one TNSR tensor H x W x (C + 1) whose last channel is the
// validity mask, plus a one-line JSON sidecar describing mode, scale and sign
// convention.
Tensor pack_displacement(const DisplacementField& d);
DisplacementField unpack_displacement(const Tensor& t, MatchMode mode, std::size_t scale = 1);
std::string displacement_sidecar(const DisplacementField& d);

}  // namespace eventmatch
