#pragma once

// Toy conditional predictor: a pre-norm transformer over flattened token
// positions with the class token prepended in context.
//
//   x[0]     = class_embedding[cond]            (cond = n_classes means NULL)
//   x[1 + p] = position_embedding[p] + sum_c token_embedding[c][F[p, c]]
//   per layer:  x += Attention(RMSNorm(x));  x += SwiGLU(RMSNorm(x))
//   logits[p] = RMSNorm(x[1 + p]) * W_head + b_head      -> [n_pos, C_eff, K]
//
// All C_eff tokens of a position are predicted in parallel from one
// sequence element. Gradients are derived by hand; the scalar type is a
// template parameter so the same code runs in double for gradient checks.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grn/numerics.hpp"
#include "grn/refine.hpp"

namespace grn {

struct PredictorConfig {
  int depth = 2;
  int hidden = 64;
  int heads = 4;
  int ffn_hidden = 128;
  int n_pos = 64;
  int c_eff = 4;
  int categories = 4;  // K
  int n_classes = 10;  // the NULL class is index n_classes

  void validate() const;
  // Closed-form parameter count.
  std::size_t parameter_count() const;
  std::uint32_t null_class() const { return static_cast<std::uint32_t>(n_classes); }

  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

struct ParamSection {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const ParamSection&, const ParamSection&) = default;
};

// Named views into the flat parameter vector, in storage order.
std::vector<ParamSection> parameter_layout(const PredictorConfig& cfg);

// Parameter groups checked independently by gradient tests.
std::vector<std::string> parameter_groups(const PredictorConfig& cfg);

template <typename Scalar>
class BasicPredictorParams {
 public:
  BasicPredictorParams() = default;
  explicit BasicPredictorParams(const PredictorConfig& cfg);

  const PredictorConfig& config() const noexcept { return cfg_; }
  const std::vector<ParamSection>& sections() const noexcept { return sections_; }
  const ParamSection& section(std::string_view name) const;

  std::span<Scalar> flat() noexcept { return values_; }
  std::span<const Scalar> flat() const noexcept { return values_; }
  std::span<Scalar> view(std::string_view name);
  std::span<const Scalar> view(std::string_view name) const;

  bool all_finite() const noexcept;

  template <typename Other>
  BasicPredictorParams<Other> cast() const {
    BasicPredictorParams<Other> out(cfg_);
    auto dst = out.flat();
    for (std::size_t i = 0; i < values_.size(); ++i) {
      dst[i] = static_cast<Other>(values_[i]);
    }
    return out;
  }

  friend bool operator==(const BasicPredictorParams&,
                         const BasicPredictorParams&) = default;

 private:
  PredictorConfig cfg_;
  std::vector<ParamSection> sections_;
  std::vector<Scalar> values_;
};

using PredictorParams = BasicPredictorParams<float>;

// Normal(0, init_std) for matrices and embeddings, ones for norm gains,
// zeros for the output head.
PredictorParams init_params(const PredictorConfig& cfg, Rng& rng,
                            double init_std = 0.02);

// Condition id; std::nullopt selects the learned NULL class.
using Condition = std::optional<std::uint32_t>;

template <typename Scalar>
struct Predictor {
  // Logits [n_pos, C_eff, K] for one composed state.
  static BasicTensor<Scalar> forward(const BasicPredictorParams<Scalar>& params,
                                     const TokenMap& input, Condition cond);

  // Mean cross-entropy (nats) of targets under forward(input, cond) over all
  // n_pos * C_eff tokens. Gradients are added into `grad` (flat layout).
  static double backward(const BasicPredictorParams<Scalar>& params,
                         const TokenMap& input, Condition cond,
                         const TokenMap& targets, std::span<Scalar> grad);
};

template <typename Scalar>
BasicTensor<Scalar> forward(const BasicPredictorParams<Scalar>& params,
                            const TokenMap& input, Condition cond) {
  return Predictor<Scalar>::forward(params, input, cond);
}

// uncond + scale * (cond - uncond), in logit space.
template <typename T>
BasicTensor<T> apply_cfg(const BasicTensor<T>& logits_cond,
                         const BasicTensor<T>& logits_uncond, double scale);

// Categorical draw per token from softmax(logits / temperature).
TokenMap sample_tokens(const Tensor& logits, double temperature, Rng& rng,
                       Layout layout);

// Checkpoint container, see docs/formats.md.
inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  PredictorParams params;
  std::string metadata_json;  // training config and provenance, free form
};

void save_checkpoint(const std::filesystem::path& path,
                     const PredictorParams& params,
                     const std::string& metadata_json = "{}");
// When `expected` is given, a checkpoint built for a different predictor
// configuration is refused with ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<PredictorConfig>& expected = std::nullopt);

}  // namespace grn
