#include "cmcdrop/dropout.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cmcdrop/errors.hpp"

namespace cmcdrop {

BigInt count_possible_masks(std::size_t layer_size) {
  if (layer_size < 1) throw ConfigError("layer size must be at least 1");
  return (BigInt(1) << layer_size) - 1;
}

namespace {

void check_rate(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  }
}

std::vector<std::uint8_t> draw_bits(std::size_t s, double keep_prob, Rng& rng) {
  std::vector<std::uint8_t> bits(s);
  for (auto& b : bits) b = rng.bernoulli(keep_prob) ? 1 : 0;
  return bits;
}

DropoutMask scale_bits(const std::vector<std::uint8_t>& bits, double scale) {
  DropoutMask mask;
  mask.entries.reserve(bits.size());
  for (auto b : bits) mask.entries.push_back(b ? scale : 0.0);
  return mask;
}

}  // namespace

MaskBank build_mask_bank(std::size_t layer_size, std::size_t n_sample, double p,
                         std::uint64_t seed) {
  check_rate(p);
  if (layer_size < 1) throw ConfigError("mask bank needs a layer size of at least 1");
  if (n_sample < 1) throw ConfigError("mask bank needs at least one mask");
  if (count_possible_masks(layer_size) < n_sample) {
    throw ConfigError("infeasible mask bank: requested " + std::to_string(n_sample) +
                      " distinct masks but a layer of " + std::to_string(layer_size) +
                      " units admits only 2^" + std::to_string(layer_size) + " - 1");
  }

  const double keep_prob = 1.0 - p;
  const double scale = 1.0 / keep_prob;
  const std::uint64_t max_iterations = 1'000'000ULL * n_sample;

  MaskBank bank;
  bank.layer_size = layer_size;
  bank.dropout_rate = p;
  bank.creation_seed = seed;
  bank.masks.reserve(n_sample);

  Rng rng(seed);
  std::set<std::vector<std::uint8_t>> seen;
  std::uint64_t iterations = 0;
  while (bank.masks.size() < n_sample) {
    if (++iterations > max_iterations) {
      throw NumericError("mask bank sampling did not find " + std::to_string(n_sample) +
                         " distinct masks within " + std::to_string(max_iterations) +
                         " draws (S=" + std::to_string(layer_size) +
                         ", p=" + std::to_string(p) + ")");
    }
    auto bits = draw_bits(layer_size, keep_prob, rng);
    bool all_zero = true;
    for (auto b : bits) {
      if (b) {
        all_zero = false;
        break;
      }
    }
    if (all_zero) continue;
    if (!seen.insert(bits).second) continue;
    bank.masks.push_back(scale_bits(bits, scale));
  }
  return bank;
}

const DropoutMask& sample_mask(const MaskBank& bank, Rng& rng) {
  if (bank.masks.empty()) throw ConfigError("cannot sample from an empty mask bank");
  return bank.masks[rng.uniform_index(bank.masks.size())];
}

std::pair<Vector, std::optional<DropoutMask>> apply_traditional(const Vector& y, double p,
                                                                ForwardMode mode, Rng& rng) {
  check_rate(p);
  if (!is_stochastic(mode)) return {y, std::nullopt};

  const double keep_prob = 1.0 - p;
  const double scale = 1.0 / keep_prob;
  DropoutMask mask;
  mask.entries.resize(static_cast<std::size_t>(y.size()));
  Vector out(y.size());
  for (Index i = 0; i < y.size(); ++i) {
    const double m = rng.bernoulli(keep_prob) ? scale : 0.0;
    mask.entries[static_cast<std::size_t>(i)] = m;
    out[i] = y[i] * m;
  }
  return {std::move(out), std::move(mask)};
}

std::pair<Vector, std::optional<DropoutMask>> apply_controlled(const Vector& y,
                                                               const MaskBank& bank,
                                                               ForwardMode mode, Rng& rng) {
  if (static_cast<std::size_t>(y.size()) != bank.layer_size) {
    throw ConfigError("controlled dropout input length " + std::to_string(y.size()) +
                      " does not match bank layer size " + std::to_string(bank.layer_size));
  }
  if (!is_stochastic(mode)) return {y, std::nullopt};

  const DropoutMask& mask = sample_mask(bank, rng);
  Vector out(y.size());
  for (Index i = 0; i < y.size(); ++i) {
    out[i] = y[i] * mask.entries[static_cast<std::size_t>(i)];
  }
  return {std::move(out), mask};
}

std::string bank_to_json(const MaskBank& bank) {
  nlohmann::json j;
  j["S"] = bank.layer_size;
  j["p"] = bank.dropout_rate;
  j["n_sample"] = bank.n_sample();
  j["seed"] = bank.creation_seed;
  auto& masks = j["masks"] = nlohmann::json::array();
  for (const auto& m : bank.masks) masks.push_back(m.entries);
  return j.dump(2);
}

MaskBank bank_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("mask bank JSON parse failure: ") + e.what());
  }
  MaskBank bank;
  try {
    bank.layer_size = j.at("S").get<std::size_t>();
    bank.dropout_rate = j.at("p").get<double>();
    bank.creation_seed = j.at("seed").get<std::uint64_t>();
    for (const auto& m : j.at("masks")) {
      DropoutMask mask;
      mask.entries = m.get<std::vector<double>>();
      bank.masks.push_back(std::move(mask));
    }
    if (j.at("n_sample").get<std::size_t>() != bank.masks.size()) {
      throw IoError("mask bank JSON: n_sample does not match the mask list");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("mask bank JSON field failure: ") + e.what());
  }

  check_rate(bank.dropout_rate);
  const double scale = 1.0 / (1.0 - bank.dropout_rate);
  std::set<std::vector<double>> distinct;
  for (const auto& mask : bank.masks) {
    if (mask.entries.size() != bank.layer_size) {
      throw IoError("mask bank JSON: mask length differs from S");
    }
    bool any_on = false;
    for (double v : mask.entries) {
      if (v == scale) {
        any_on = true;
      } else if (v != 0.0) {
        throw IoError("mask bank JSON: entry is neither 0 nor 1/(1-p)");
      }
    }
    if (!any_on) throw IoError("mask bank JSON: all-zero mask");
    if (!distinct.insert(mask.entries).second) {
      throw IoError("mask bank JSON: duplicate mask");
    }
  }
  if (bank.masks.empty()) throw IoError("mask bank JSON: empty bank");
  return bank;
}

void save_bank(const MaskBank& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << bank_to_json(bank) << '\n';
  if (!out) throw IoError("write failure on " + path);
}

MaskBank load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return bank_from_json(ss.str());
}

}  // namespace cmcdrop
