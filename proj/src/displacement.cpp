#include "eventmatch/displacement.hpp"

#include <nlohmann/json.hpp>

namespace eventmatch {

const char* to_string(MatchMode mode) { return mode == MatchMode::Flow ? "flow" : "disparity"; }

MatchMode match_mode_from_string(const std::string& s) {
  if (s == "flow") return MatchMode::Flow;
  if (s == "disparity") return MatchMode::Disparity;
  throw FormatError("unknown displacement mode '" + s + "'");
}

DisplacementField DisplacementField::zeros(MatchMode mode, std::size_t height, std::size_t width,
                                           std::size_t scale) {
  return {mode, Tensor({height, width, channels_for(mode)}), Mask({height, width}, 1), scale};
}

Tensor pack_displacement(const DisplacementField& d) {
  const auto h = d.height(), w = d.width(), c = d.channels();
  Tensor out({h, w, c + 1});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t k = 0; k < c; ++k) out(i, j, k) = d.data(i, j, k);
      out(i, j, c) = d.valid(i, j) ? 1.0f : 0.0f;
    }
  return out;
}

DisplacementField unpack_displacement(const Tensor& t, MatchMode mode, std::size_t scale) {
  const std::size_t c = channels_for(mode);
  if (t.ndim() != 3 || t.dim(2) != c + 1)
    throw ShapeError(std::string("displacement tensor for ") + to_string(mode) + " must be HxWx" +
                     std::to_string(c + 1) + ", got " + shape_string(t.dims()));
  const auto h = t.dim(0), w = t.dim(1);
  DisplacementField d{mode, Tensor({h, w, c}), Mask({h, w}), scale};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t k = 0; k < c; ++k) d.data(i, j, k) = t(i, j, k);
      d.valid(i, j) = t(i, j, c) > 0.5f ? 1 : 0;
    }
  return d;
}

std::string displacement_sidecar(const DisplacementField& d) {
  nlohmann::json j;
  j["mode"] = to_string(d.mode);
  j["scale"] = d.scale;
  j["channels"] = d.mode == MatchMode::Flow ? nlohmann::json{"u", "v", "valid"}
                                            : nlohmann::json{"d", "valid"};
  j["convention"] = d.mode == MatchMode::Flow ? "target = reference + (u, v)"
                                              : "x_right = x_left - d, d >= 0";
  return j.dump();
}

}  // namespace eventmatch
