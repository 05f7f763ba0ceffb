#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pnmkv {

using Bytes = std::uint64_t;
using Tokens = std::uint64_t;

// Transformer shape parameters. d_in/d_out are stored in elements
// ("4K/14K" style shorthand is expanded to the real checkpoint dims).
struct ModelSpec {
  std::string name;
  std::uint64_t n_l = 0;        // layers
  std::uint64_t n_h = 0;        // query heads
  std::uint64_t d_h = 0;        // per-head dim
  std::uint64_t d_in = 0;       // hidden dim
  std::uint64_t d_out = 0;      // MLP intermediate dim
  std::uint64_t g = 1;          // GQA group size
  Tokens context_window = 0;
  std::uint64_t bytes_per_elem = 2;  // FP16
  std::uint64_t mlp_matrices = 3;    // gated MLP: gate, up, down

  [[nodiscard]] std::uint64_t kv_heads() const { return n_h / g; }

  void validate() const {
    if (n_l == 0 || n_h == 0 || d_h == 0 || d_in == 0 || d_out == 0 || g == 0 ||
        context_window == 0 || bytes_per_elem == 0 || mlp_matrices == 0)
      throw std::invalid_argument("model '" + name + "': all counts must be positive");
    if (n_h % g != 0)
      throw std::invalid_argument("model '" + name + "': n_h must be divisible by g");
  }
};

struct SizingReport {
  Bytes kv_bytes_per_token = 0;
  Bytes kv_cache_bytes = 0;
  Bytes fc_param_bytes = 0;
  std::uint64_t fc_flops_per_token = 0;
  std::uint64_t max_batch = 0;
};

inline std::vector<ModelSpec> builtin_specs() {
  constexpr Tokens cw = 128 * 1024;
  return {
      {"Llama3.1-8B", 32, 32, 128, 4096, 14336, 4, cw},
      {"Llama3.1-70B", 80, 64, 128, 8192, 28672, 8, cw},
      {"Llama3.1-405B", 126, 128, 128, 16384, 53248, 16, cw},
  };
}

inline const ModelSpec* find_builtin_spec(std::string_view name) {
  static const std::vector<ModelSpec> specs = builtin_specs();
  for (const auto& s : specs)
    if (s.name == name) return &s;
  return nullptr;
}

// K and V for every layer and KV head.
inline Bytes kv_bytes_per_token(const ModelSpec& spec) {
  return 2 * spec.n_l * spec.kv_heads() * spec.d_h * spec.bytes_per_elem;
}

inline Bytes kv_cache_bytes(const ModelSpec& spec, std::uint64_t batch, Tokens context) {
  return batch * context * kv_bytes_per_token(spec);
}

// Q and O projections, K and V projections (GQA-narrowed), MLP.
inline std::uint64_t fc_param_count(const ModelSpec& spec) {
  const std::uint64_t kv_width = spec.d_h * spec.kv_heads();
  const std::uint64_t per_layer = 2 * spec.d_in * spec.d_in + 2 * spec.d_in * kv_width +
                                  spec.mlp_matrices * spec.d_in * spec.d_out;
  return spec.n_l * per_layer;
}

inline Bytes fc_param_bytes(const ModelSpec& spec) {
  return fc_param_count(spec) * spec.bytes_per_elem;
}

// Decode-step GEMV: one multiply-add per parameter.
inline std::uint64_t fc_flops_per_token(const ModelSpec& spec) {
  return 2 * fc_param_count(spec);
}

inline std::uint64_t max_batch(const ModelSpec& spec, Bytes free_bytes,
                               Tokens resident_tokens_per_sample) {
  if (resident_tokens_per_sample == 0)
    throw std::invalid_argument("max_batch: resident_tokens_per_sample must be >= 1");
  const Bytes per_sample = resident_tokens_per_sample * kv_bytes_per_token(spec);
  return free_bytes / per_sample;
}

inline SizingReport sizing_report(const ModelSpec& spec, std::uint64_t batch, Tokens context,
                                  Bytes free_bytes) {
  SizingReport r;
  r.kv_bytes_per_token = kv_bytes_per_token(spec);
  r.kv_cache_bytes = kv_cache_bytes(spec, batch, context);
  r.fc_param_bytes = fc_param_bytes(spec);
  r.fc_flops_per_token = fc_flops_per_token(spec);
  r.max_batch = context == 0 ? 0 : max_batch(spec, free_bytes, context);
  return r;
}

}  // namespace pnmkv
