#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "cmcdrop/matrix.hpp"
#include "cmcdrop/rng.hpp"

namespace cmcdrop {

using BigInt = boost::multiprecision::cpp_int;

enum class ForwardMode { train, eval_deterministic, eval_mc };

inline bool is_stochastic(ForwardMode mode) { return mode != ForwardMode::eval_deterministic; }

// One scaled dropout mask: entries are 0 (dropped) or 1/(1-p) (kept).
struct DropoutMask {
  std::vector<double> entries;

  std::size_t size() const { return entries.size(); }
  bool operator==(const DropoutMask&) const = default;
};

// Fixed bank of pairwise-distinct scaled masks for one layer.
struct MaskBank {
  std::size_t layer_size = 0;   // S
  double dropout_rate = 0.0;    // p
  std::uint64_t creation_seed = 0;
  std::vector<DropoutMask> masks;

  std::size_t n_sample() const { return masks.size(); }
};

enum class DropoutKind { traditional, controlled };

struct DropoutAttachment {
  DropoutKind kind = DropoutKind::traditional;
  double p = 0.0;
  std::optional<MaskBank> bank;  // present iff kind == controlled
};

// Number of admissible mask configurations for a layer of S units:
// every binary vector except all-zero, i.e. 2^S - 1.
BigInt count_possible_masks(std::size_t layer_size);

// Rejection-samples `n_sample` pairwise-distinct masks, each drawn
// element-wise from Bernoulli(1-p) and scaled by 1/(1-p). All-zero draws
// are rejected. Throws ConfigError when n_sample > 2^S - 1 and
// NumericError when the rejection loop exceeds 1e6 * n_sample iterations.
MaskBank build_mask_bank(std::size_t layer_size, std::size_t n_sample, double p,
                         std::uint64_t seed);

// Uniform draw from the bank; the bank itself is never modified.
const DropoutMask& sample_mask(const MaskBank& bank, Rng& rng);

// Fresh Bernoulli mask with inverted scaling applied to y; identity in
// eval_deterministic mode. The returned mask is absent when no mask was
// applied.
std::pair<Vector, std::optional<DropoutMask>> apply_traditional(const Vector& y, double p,
                                                                ForwardMode mode, Rng& rng);

// Bank-sampled mask applied to y; identity in eval_deterministic mode.
std::pair<Vector, std::optional<DropoutMask>> apply_controlled(const Vector& y,
                                                               const MaskBank& bank,
                                                               ForwardMode mode, Rng& rng);

// JSON persistence: {"S":..., "p":..., "n_sample":..., "seed":..., "masks":[[...],...]}
std::string bank_to_json(const MaskBank& bank);
MaskBank bank_from_json(const std::string& text);
void save_bank(const MaskBank& bank, const std::string& path);
MaskBank load_bank(const std::string& path);

}  // namespace cmcdrop
