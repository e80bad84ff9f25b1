#include "grn/predictor.hpp"

#include <Eigen/Dense>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace grn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void PredictorConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ParameterError(std::string("predictor ") + name + " must be >= 1");
  };
  positive(depth, "depth");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(ffn_hidden, "ffn_hidden");
  positive(n_pos, "n_pos");
  positive(c_eff, "c_eff");
  positive(n_classes, "n_classes");
  if (hidden % heads != 0) {
    throw ParameterError("predictor hidden (" + std::to_string(hidden) +
                         ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (categories < 2 || categories > 65536) {
    throw ParameterError("predictor categories K must lie in [2, 65536]");
  }
}

std::vector<ParamSection> parameter_layout(const PredictorConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.hidden);
  const auto f = static_cast<std::size_t>(cfg.ffn_hidden);
  const auto k = static_cast<std::size_t>(cfg.categories);
  const auto c = static_cast<std::size_t>(cfg.c_eff);
  std::vector<ParamSection> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    const std::size_t size = shape_product(shape);
    out.push_back(ParamSection{std::move(name), std::move(shape), offset, size});
    offset += size;
  };
  add("tok_emb", {c, k, d});
  add("pos_emb", {static_cast<std::size_t>(cfg.n_pos), d});
  add("cls_emb", {static_cast<std::size_t>(cfg.n_classes) + 1, d});
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "norm1", {d});
    add(p + "qkv", {d, 3 * d});
    add(p + "proj", {d, d});
    add(p + "norm2", {d});
    add(p + "ffn_gate", {d, f});
    add(p + "ffn_up", {d, f});
    add(p + "ffn_down", {f, d});
  }
  add("norm_out", {d});
  add("head.weight", {d, c * k});
  add("head.bias", {c * k});
  return out;
}

std::size_t PredictorConfig::parameter_count() const {
  validate();
  const auto d = static_cast<std::size_t>(hidden);
  const auto f = static_cast<std::size_t>(ffn_hidden);
  const std::size_t ck = static_cast<std::size_t>(c_eff) * static_cast<std::size_t>(categories);
  const std::size_t per_layer = 2 * d + 4 * d * d + 3 * d * f;
  return ck * d + static_cast<std::size_t>(n_pos) * d +
         (static_cast<std::size_t>(n_classes) + 1) * d +
         static_cast<std::size_t>(depth) * per_layer + d + d * ck + ck;
}

std::vector<std::string> parameter_groups(const PredictorConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& s : parameter_layout(cfg)) names.push_back(s.name);
  return names;
}

template <typename Scalar>
BasicPredictorParams<Scalar>::BasicPredictorParams(const PredictorConfig& cfg)
    : cfg_(cfg), sections_(parameter_layout(cfg)) {
  values_.assign(sections_.back().offset + sections_.back().size, Scalar{0});
}

template <typename Scalar>
const ParamSection& BasicPredictorParams<Scalar>::section(std::string_view name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return s;
  }
  throw ParameterError("unknown parameter section '" + std::string(name) + "'");
}

template <typename Scalar>
std::span<Scalar> BasicPredictorParams<Scalar>::view(std::string_view name) {
  const auto& s = section(name);
  return std::span<Scalar>(values_).subspan(s.offset, s.size);
}

template <typename Scalar>
std::span<const Scalar> BasicPredictorParams<Scalar>::view(std::string_view name) const {
  const auto& s = section(name);
  return std::span<const Scalar>(values_).subspan(s.offset, s.size);
}

template <typename Scalar>
bool BasicPredictorParams<Scalar>::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(),
                     [](Scalar v) { return std::isfinite(v); });
}

template class BasicPredictorParams<float>;
template class BasicPredictorParams<double>;

PredictorParams init_params(const PredictorConfig& cfg, Rng& rng, double init_std) {
  PredictorParams params(cfg);
  for (const auto& s : params.sections()) {
    auto v = params.view(s.name);
    const bool gain = s.name.ends_with("norm1") || s.name.ends_with("norm2") ||
                      s.name == "norm_out";
    const bool head = s.name.starts_with("head.");
    for (float& x : v) {
      if (gain) {
        x = 1.0f;
      } else if (head) {
        x = 0.0f;
      } else {
        x = static_cast<float>(init_std * rng.normal());
      }
    }
  }
  return params;
}

namespace {

constexpr double kNormEps = 1e-6;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstRowMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;
template <typename S>
using RowMap = Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>;

struct LayerOffsets {
  std::size_t norm1, qkv, proj, norm2, gate, up, down;
};

struct Offsets {
  std::size_t tok, pos, cls, norm_out, head_w, head_b;
  std::vector<LayerOffsets> layers;

  explicit Offsets(const std::vector<ParamSection>& sections, int depth) {
    auto at = [&](const std::string& name) {
      for (const auto& s : sections) {
        if (s.name == name) return s.offset;
      }
      throw ParameterError("missing section " + name);
    };
    tok = at("tok_emb");
    pos = at("pos_emb");
    cls = at("cls_emb");
    for (int l = 0; l < depth; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      layers.push_back(LayerOffsets{at(p + "norm1"), at(p + "qkv"), at(p + "proj"),
                                    at(p + "norm2"), at(p + "ffn_gate"),
                                    at(p + "ffn_up"), at(p + "ffn_down")});
    }
    norm_out = at("norm_out");
    head_w = at("head.weight");
    head_b = at("head.bias");
  }
};

template <typename S>
struct LayerCache {
  Mat<S> x_in, n1, qkv, mixed, x_mid, n2, gate, up, act;
  ColVec<S> inv1, inv2;
  std::vector<Mat<S>> attn;
};

template <typename S>
struct ForwardCache {
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final, n_final, logits;
  ColVec<S> inv_final;
};

template <typename S>
void rms_norm(const Mat<S>& x, const S* gain, Mat<S>& out, ColVec<S>& inv) {
  const auto d = x.cols();
  ConstRowMap<S> g(gain, d);
  out.resize(x.rows(), d);
  inv.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S ms = x.row(r).squaredNorm() / static_cast<S>(d);
    inv(r) = S{1} / std::sqrt(ms + static_cast<S>(kNormEps));
    out.row(r) = (x.row(r) * inv(r)).cwiseProduct(g);
  }
}

// Accumulates d gain and returns d x for y = g * x * inv.
template <typename S>
Mat<S> rms_norm_backward(const Mat<S>& dy, const Mat<S>& x, const ColVec<S>& inv,
                         const S* gain, S* dgain) {
  const auto d = x.cols();
  ConstRowMap<S> g(gain, d);
  RowMap<S> dg(dgain, d);
  Mat<S> dx(x.rows(), d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto gdy = dy.row(r).cwiseProduct(g);
    dg += dy.row(r).cwiseProduct(x.row(r)) * inv(r);
    const S dot = gdy.dot(x.row(r));
    const S r3 = inv(r) * inv(r) * inv(r);
    dx.row(r) = gdy * inv(r) - x.row(r) * (r3 * dot / static_cast<S>(d));
  }
  return dx;
}

template <typename S>
S sigmoid(S a) {
  return S{1} / (S{1} + std::exp(-a));
}

void check_input(const PredictorConfig& cfg, const TokenMap& input, Condition cond) {
  if (static_cast<int>(input.positions) != cfg.n_pos ||
      static_cast<int>(input.channels) != cfg.c_eff ||
      static_cast<int>(input.categories) != cfg.categories ||
      input.values.size() != input.positions * input.channels) {
    throw ParameterError("predictor input extents [" + std::to_string(input.positions) +
                         ", " + std::to_string(input.channels) + "] K=" +
                         std::to_string(input.categories) + " do not match config [" +
                         std::to_string(cfg.n_pos) + ", " + std::to_string(cfg.c_eff) +
                         "] K=" + std::to_string(cfg.categories));
  }
  for (auto v : input.values) {
    if (v >= cfg.categories) throw IndexError("predictor input token out of range");
  }
  if (cond && *cond >= static_cast<std::uint32_t>(cfg.n_classes)) {
    throw ParameterError("condition " + std::to_string(*cond) + " >= n_classes " +
                         std::to_string(cfg.n_classes));
  }
}

template <typename S>
void run_forward(const BasicPredictorParams<S>& params, const TokenMap& input,
                 Condition cond, ForwardCache<S>& cache) {
  const PredictorConfig& cfg = params.config();
  check_input(cfg, input, cond);
  const Offsets off(params.sections(), cfg.depth);
  const S* w = params.flat().data();
  const Eigen::Index d = cfg.hidden;
  const Eigen::Index f = cfg.ffn_hidden;
  const Eigen::Index seq = cfg.n_pos + 1;
  const Eigen::Index heads = cfg.heads;
  const Eigen::Index dh = d / heads;
  const Eigen::Index k = cfg.categories;
  const Eigen::Index c_eff = cfg.c_eff;
  const S scale = S{1} / std::sqrt(static_cast<S>(dh));

  Mat<S> x(seq, d);
  const std::uint32_t cls = cond.value_or(cfg.null_class());
  x.row(0) = ConstRowMap<S>(w + off.cls + cls * d, d);
  for (Eigen::Index p = 0; p < cfg.n_pos; ++p) {
    x.row(1 + p) = ConstRowMap<S>(w + off.pos + p * d, d);
    for (Eigen::Index c = 0; c < c_eff; ++c) {
      const auto v = input.values[static_cast<std::size_t>(p * c_eff + c)];
      x.row(1 + p) += ConstRowMap<S>(w + off.tok + (c * k + v) * d, d);
    }
  }

  cache.layers.resize(static_cast<std::size_t>(cfg.depth));
  for (int l = 0; l < cfg.depth; ++l) {
    const LayerOffsets& lo = off.layers[static_cast<std::size_t>(l)];
    LayerCache<S>& lc = cache.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;
    rms_norm<S>(lc.x_in, w + lo.norm1, lc.n1, lc.inv1);
    lc.qkv.noalias() = lc.n1 * ConstMatMap<S>(w + lo.qkv, d, 3 * d);
    lc.mixed.resize(seq, d);
    lc.attn.resize(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto q = lc.qkv.middleCols(h * dh, dh);
      const auto kk = lc.qkv.middleCols(d + h * dh, dh);
      const auto v = lc.qkv.middleCols(2 * d + h * dh, dh);
      Mat<S>& a = lc.attn[static_cast<std::size_t>(h)];
      a.noalias() = (q * kk.transpose()) * scale;
      for (Eigen::Index r = 0; r < seq; ++r) {
        const S peak = a.row(r).maxCoeff();
        a.row(r) = (a.row(r).array() - peak).exp().matrix();
        a.row(r) /= a.row(r).sum();
      }
      lc.mixed.middleCols(h * dh, dh).noalias() = a * v;
    }
    lc.x_mid = lc.x_in;
    lc.x_mid.noalias() += lc.mixed * ConstMatMap<S>(w + lo.proj, d, d);
    rms_norm<S>(lc.x_mid, w + lo.norm2, lc.n2, lc.inv2);
    lc.gate.noalias() = lc.n2 * ConstMatMap<S>(w + lo.gate, d, f);
    lc.up.noalias() = lc.n2 * ConstMatMap<S>(w + lo.up, d, f);
    lc.act = lc.gate.unaryExpr([](S a) { return a * sigmoid(a); }).cwiseProduct(lc.up);
    x = lc.x_mid;
    x.noalias() += lc.act * ConstMatMap<S>(w + lo.down, f, d);
  }
  cache.x_final = std::move(x);
  rms_norm<S>(cache.x_final, w + off.norm_out, cache.n_final, cache.inv_final);
  const Eigen::Index ck = c_eff * k;
  cache.logits.noalias() =
      cache.n_final.bottomRows(cfg.n_pos) * ConstMatMap<S>(w + off.head_w, d, ck);
  cache.logits.rowwise() += ConstRowMap<S>(w + off.head_b, ck);
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> Predictor<Scalar>::forward(const BasicPredictorParams<Scalar>& params,
                                               const TokenMap& input, Condition cond) {
  ForwardCache<Scalar> cache;
  run_forward(params, input, cond, cache);
  const auto& cfg = params.config();
  BasicTensor<Scalar> out({static_cast<std::size_t>(cfg.n_pos),
                           static_cast<std::size_t>(cfg.c_eff),
                           static_cast<std::size_t>(cfg.categories)});
  std::copy(cache.logits.data(), cache.logits.data() + cache.logits.size(),
            out.values().begin());
  return out;
}

template <typename Scalar>
double Predictor<Scalar>::backward(const BasicPredictorParams<Scalar>& params,
                                   const TokenMap& input, Condition cond,
                                   const TokenMap& targets, std::span<Scalar> grad) {
  using S = Scalar;
  const PredictorConfig& cfg = params.config();
  if (!targets.same_extents(input)) {
    throw ParameterError("backward: targets do not match input extents");
  }
  if (grad.size() != params.flat().size()) {
    throw ParameterError("backward: gradient buffer has the wrong size");
  }
  ForwardCache<S> cache;
  run_forward(params, input, cond, cache);

  const Offsets off(params.sections(), cfg.depth);
  const S* w = params.flat().data();
  S* g = grad.data();
  const Eigen::Index d = cfg.hidden;
  const Eigen::Index f = cfg.ffn_hidden;
  const Eigen::Index seq = cfg.n_pos + 1;
  const Eigen::Index heads = cfg.heads;
  const Eigen::Index dh = d / heads;
  const Eigen::Index k = cfg.categories;
  const Eigen::Index c_eff = cfg.c_eff;
  const Eigen::Index ck = c_eff * k;
  const S scale = S{1} / std::sqrt(static_cast<S>(dh));
  const double tokens = static_cast<double>(cfg.n_pos) * static_cast<double>(c_eff);

  // Cross-entropy and its gradient with respect to the logits.
  Mat<S> dlogits(cfg.n_pos, ck);
  double loss = 0.0;
  std::vector<double> p(static_cast<std::size_t>(k));
  for (Eigen::Index pos = 0; pos < cfg.n_pos; ++pos) {
    for (Eigen::Index c = 0; c < c_eff; ++c) {
      const auto target = targets.values[static_cast<std::size_t>(pos * c_eff + c)];
      if (target >= k) throw IndexError("backward: target token out of range");
      const S* row = cache.logits.data() + pos * ck + c * k;
      double peak = row[0];
      for (Eigen::Index j = 1; j < k; ++j) peak = std::max(peak, static_cast<double>(row[j]));
      double total = 0.0;
      for (Eigen::Index j = 0; j < k; ++j) {
        p[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(row[j]) - peak);
        total += p[static_cast<std::size_t>(j)];
      }
      loss += std::log(total) + peak - static_cast<double>(row[target]);
      for (Eigen::Index j = 0; j < k; ++j) {
        const double prob = p[static_cast<std::size_t>(j)] / total;
        dlogits(pos, c * k + j) =
            static_cast<S>((prob - (j == target ? 1.0 : 0.0)) / tokens);
      }
    }
  }
  loss /= tokens;

  // Output head.
  MatMap<S>(g + off.head_w, d, ck).noalias() +=
      cache.n_final.bottomRows(cfg.n_pos).transpose() * dlogits;
  RowMap<S>(g + off.head_b, ck) += dlogits.colwise().sum();
  Mat<S> dn = Mat<S>::Zero(seq, d);
  dn.bottomRows(cfg.n_pos).noalias() =
      dlogits * ConstMatMap<S>(w + off.head_w, d, ck).transpose();
  Mat<S> dx = rms_norm_backward<S>(dn, cache.x_final, cache.inv_final,
                                   w + off.norm_out, g + off.norm_out);

  for (int l = cfg.depth - 1; l >= 0; --l) {
    const LayerOffsets& lo = off.layers[static_cast<std::size_t>(l)];
    const LayerCache<S>& lc = cache.layers[static_cast<std::size_t>(l)];

    // Gated feed-forward: x_out = x_mid + (silu(gate) * up) W_down.
    MatMap<S>(g + lo.down, f, d).noalias() += lc.act.transpose() * dx;
    const Mat<S> dact = dx * ConstMatMap<S>(w + lo.down, f, d).transpose();
    Mat<S> dgate(seq, f);
    Mat<S> dup(seq, f);
    for (Eigen::Index r = 0; r < seq; ++r) {
      for (Eigen::Index j = 0; j < f; ++j) {
        const S a = lc.gate(r, j);
        const S s = sigmoid(a);
        dup(r, j) = dact(r, j) * a * s;
        dgate(r, j) = dact(r, j) * lc.up(r, j) * s * (S{1} + a * (S{1} - s));
      }
    }
    MatMap<S>(g + lo.gate, d, f).noalias() += lc.n2.transpose() * dgate;
    MatMap<S>(g + lo.up, d, f).noalias() += lc.n2.transpose() * dup;
    Mat<S> dn2 = dgate * ConstMatMap<S>(w + lo.gate, d, f).transpose();
    dn2.noalias() += dup * ConstMatMap<S>(w + lo.up, d, f).transpose();
    dx += rms_norm_backward<S>(dn2, lc.x_mid, lc.inv2, w + lo.norm2, g + lo.norm2);

    // Attention: x_mid = x_in + mixed W_proj.
    MatMap<S>(g + lo.proj, d, d).noalias() += lc.mixed.transpose() * dx;
    const Mat<S> dmixed = dx * ConstMatMap<S>(w + lo.proj, d, d).transpose();
    Mat<S> dqkv(seq, 3 * d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Mat<S>& a = lc.attn[static_cast<std::size_t>(h)];
      const auto q = lc.qkv.middleCols(h * dh, dh);
      const auto kk = lc.qkv.middleCols(d + h * dh, dh);
      const auto v = lc.qkv.middleCols(2 * d + h * dh, dh);
      const auto dout = dmixed.middleCols(h * dh, dh);
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = a.transpose() * dout;
      const Mat<S> da = dout * v.transpose();
      Mat<S> dscores(seq, seq);
      for (Eigen::Index r = 0; r < seq; ++r) {
        const S dot = da.row(r).dot(a.row(r));
        dscores.row(r) = a.row(r).cwiseProduct((da.row(r).array() - dot).matrix());
      }
      dscores *= scale;
      dqkv.middleCols(h * dh, dh).noalias() = dscores * kk;
      dqkv.middleCols(d + h * dh, dh).noalias() = dscores.transpose() * q;
    }
    MatMap<S>(g + lo.qkv, d, 3 * d).noalias() += lc.n1.transpose() * dqkv;
    const Mat<S> dn1 = dqkv * ConstMatMap<S>(w + lo.qkv, d, 3 * d).transpose();
    dx += rms_norm_backward<S>(dn1, lc.x_in, lc.inv1, w + lo.norm1, g + lo.norm1);
  }

  // Embeddings.
  const std::uint32_t cls = cond.value_or(cfg.null_class());
  RowMap<S>(g + off.cls + cls * d, d) += dx.row(0);
  for (Eigen::Index pos = 0; pos < cfg.n_pos; ++pos) {
    RowMap<S>(g + off.pos + pos * d, d) += dx.row(1 + pos);
    for (Eigen::Index c = 0; c < c_eff; ++c) {
      const auto v = input.values[static_cast<std::size_t>(pos * c_eff + c)];
      RowMap<S>(g + off.tok + (c * k + v) * d, d) += dx.row(1 + pos);
    }
  }
  return loss;
}

template struct Predictor<float>;
template struct Predictor<double>;

template <typename T>
BasicTensor<T> apply_cfg(const BasicTensor<T>& logits_cond,
                         const BasicTensor<T>& logits_uncond, double scale) {
  if (logits_cond.shape() != logits_uncond.shape()) {
    throw ParameterError("apply_cfg: conditional and unconditional logits differ in shape");
  }
  if (!(scale >= 0.0)) throw ParameterError("apply_cfg: scale must be >= 0");
  if (scale == 1.0) return logits_cond;
  BasicTensor<T> out = logits_uncond;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = logits_uncond[i];
    out[i] = static_cast<T>(u + scale * (static_cast<double>(logits_cond[i]) - u));
  }
  return out;
}

template Tensor apply_cfg<float>(const Tensor&, const Tensor&, double);
template TensorD apply_cfg<double>(const TensorD&, const TensorD&, double);

TokenMap sample_tokens(const Tensor& logits, double temperature, Rng& rng,
                       Layout layout) {
  if (!(temperature > 0.0)) throw ParameterError("sampling temperature must be positive");
  if (logits.rank() != 3) throw ParameterError("sample_tokens expects [n_pos, C_eff, K] logits");
  const std::size_t k = logits.extent(2);
  TokenMap out(layout, static_cast<std::uint32_t>(k), logits.extent(0), logits.extent(1));
  std::vector<float> probs(k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    softmax_row<float>(logits.data().subspan(i * k, k), temperature, probs);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t pick = k;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (probs[j] > 0.0f) last_positive = j;
      cumulative += probs[j];
      if (u < cumulative) {
        pick = j;
        break;
      }
    }
    // Rounding can leave the cumulative sum a hair below 1.
    if (pick == k) pick = last_positive;
    out.values[i] = static_cast<std::uint16_t>(pick);
  }
  return out;
}

namespace {

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <typename T>
  T get(const char* what) {
    require(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    require(n, what);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t n, const char* what) {
    if (n > data_.size() - pos_) {
      throw ParseError(std::string("checkpoint truncated while reading ") + what,
                       data_.size());
    }
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::string describe_mismatch(const PredictorConfig& a, const PredictorConfig& b) {
  std::ostringstream out;
  auto field = [&](const char* name, int x, int y) {
    if (x != y) out << " " << name << " (checkpoint " << x << " vs expected " << y << ")";
  };
  field("depth", a.depth, b.depth);
  field("hidden", a.hidden, b.hidden);
  field("heads", a.heads, b.heads);
  field("ffn_hidden", a.ffn_hidden, b.ffn_hidden);
  field("n_pos", a.n_pos, b.n_pos);
  field("c_eff", a.c_eff, b.c_eff);
  field("categories", a.categories, b.categories);
  field("n_classes", a.n_classes, b.n_classes);
  return out.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PredictorParams& params,
                     const std::string& metadata_json) {
  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  const PredictorConfig& c = params.config();
  for (int v : {c.depth, c.hidden, c.heads, c.ffn_hidden, c.n_pos, c.c_eff,
                c.categories, c.n_classes}) {
    w.put(static_cast<std::int32_t>(v));
  }
  w.put(static_cast<std::uint32_t>(metadata_json.size()));
  w.put_bytes(metadata_json.data(), metadata_json.size());
  w.put(static_cast<std::uint32_t>(params.sections().size()));
  for (const auto& s : params.sections()) {
    w.put(static_cast<std::uint16_t>(s.name.size()));
    w.put_bytes(s.name.data(), s.name.size());
    w.put(static_cast<std::uint8_t>(s.shape.size()));
    for (std::size_t e : s.shape) w.put(static_cast<std::uint32_t>(e));
    w.put(static_cast<std::uint64_t>(s.size));
    w.put_bytes(params.flat().data() + s.offset, s.size * sizeof(float));
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size())));
  w.put(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<PredictorConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  Reader r(bytes);
  const auto magic = r.take(sizeof(kCheckpointMagic), "magic");
  for (std::size_t i = 0; i < magic.size(); ++i) {
    if (magic[i] != static_cast<std::uint8_t>(kCheckpointMagic[i])) {
      throw ParseError(path.string() + ": not a checkpoint (bad magic)", i);
    }
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " +
                         std::to_string(version),
                     sizeof(kCheckpointMagic));
  }
  PredictorConfig cfg;
  for (int* field : {&cfg.depth, &cfg.hidden, &cfg.heads, &cfg.ffn_hidden, &cfg.n_pos,
                     &cfg.c_eff, &cfg.categories, &cfg.n_classes}) {
    *field = r.get<std::int32_t>("config");
  }
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw ParseError(path.string() + ": invalid stored config: " + e.what(), 12);
  }
  if (expected && !(*expected == cfg)) {
    throw ConfigError("checkpoint " + path.string() +
                      " was built for a different predictor config:" +
                      describe_mismatch(cfg, *expected));
  }
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto meta = r.take(meta_len, "metadata");
  Checkpoint ckpt{PredictorParams(cfg), std::string(meta.begin(), meta.end())};

  const auto count = r.get<std::uint32_t>("section count");
  if (count != ckpt.params.sections().size()) {
    throw ParseError(path.string() + ": section count does not match config", r.position());
  }
  for (const auto& s : ckpt.params.sections()) {
    const std::size_t at = r.position();
    const auto name_len = r.get<std::uint16_t>("section name");
    const auto name = r.take(name_len, "section name");
    if (std::string(name.begin(), name.end()) != s.name) {
      throw ParseError(path.string() + ": expected section '" + s.name + "'", at);
    }
    const auto ndims = r.get<std::uint8_t>("section rank");
    std::vector<std::size_t> shape;
    for (int i = 0; i < ndims; ++i) shape.push_back(r.get<std::uint32_t>("section shape"));
    const auto n = r.get<std::uint64_t>("section size");
    if (shape != s.shape || n != s.size) {
      throw ParseError(path.string() + ": section '" + s.name + "' has the wrong shape", at);
    }
    const auto data = r.take(n * sizeof(float), "section data");
    std::memcpy(ckpt.params.flat().data() + s.offset, data.data(), data.size());
  }
  const std::size_t body = r.position();
  const auto stored_crc = r.get<std::uint32_t>("checksum");
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(body)));
  if (crc != stored_crc) throw ParseError(path.string() + ": checksum mismatch", body);
  if (r.remaining() != 0) {
    throw ParseError(path.string() + ": trailing bytes after checkpoint", r.position());
  }
  if (!ckpt.params.all_finite()) {
    throw NumericError(path.string() + ": checkpoint contains non-finite parameters");
  }
  return ckpt;
}

}  // namespace grn
