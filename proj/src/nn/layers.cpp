#include "prccf/nn/layers.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include "prccf/errors.hpp"

namespace prccf::nn {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor ParameterStore::add(std::string name, std::string stage, Matrix init) {
  Tensor t = Tensor::parameter(std::move(init));
  params_.push_back({std::move(name), std::move(stage), t});
  return t;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError("truncated parameter file");
  return v;
}

}  // namespace

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write parameters " + path.string());
  put<std::uint64_t>(out, params_.size());
  for (const auto& p : params_) {
    put<std::uint64_t>(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::int64_t>(out, p.tensor.rows());
    put<std::int64_t>(out, p.tensor.cols());
    out.write(reinterpret_cast<const char*>(p.tensor.value().data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.tensor.value().size())));
  }
}

void ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open parameters " + path.string());
  const auto n = get<std::uint64_t>(in);
  if (n != params_.size()) throw LoadError(path.string() + ": parameter count mismatch");
  for (auto& p : params_) {
    std::string name(get<std::uint64_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    if (name != p.name || rows != p.tensor.rows() || cols != p.tensor.cols())
      throw LoadError(path.string() + ": parameter '" + name + "' does not match model layout");
    auto& value = p.tensor.mutable_value();
    if (!in.read(reinterpret_cast<char*>(value.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(value.size()))))
      throw LoadError("truncated parameter file");
  }
}

Matrix init_normal(Rng& rng, Index rows, Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

Linear::Linear(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage, Index in,
               Index out)
    : weight(store.add(name + ".weight", stage, init_normal(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))))),
      bias(store.add(name + ".bias", stage, Matrix::Zero(1, out))) {}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, const std::string& stage, Index dim)
    : gain(store.add(name + ".gain", stage, Matrix::Ones(1, dim))),
      bias(store.add(name + ".bias", stage, Matrix::Zero(1, dim))) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, Rng& rng, const std::string& name,
                                       const std::string& stage, Index dim, int heads_)
    : q(store, rng, name + ".q", stage, dim, dim),
      k(store, rng, name + ".k", stage, dim, dim),
      v(store, rng, name + ".v", stage, dim, dim),
      o(store, rng, name + ".o", stage, dim, dim),
      heads(heads_) {
  if (heads < 1 || dim % heads != 0) throw ContractViolation("hidden size must be divisible by head count");
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys, const Matrix* mask) const {
  const Tensor qp = q(queries), kp = k(keys), vp = v(keys);
  const Index head_dim = qp.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Index start = h * head_dim;
    const Tensor scores = scale(matmul_nt(slice_cols(qp, start, head_dim), slice_cols(kp, start, head_dim)), inv_sqrt);
    outs.push_back(matmul(softmax_rows(scores, mask), slice_cols(vp, start, head_dim)));
  }
  return o(heads == 1 ? outs[0] : concat_cols(outs));
}

FeedForward::FeedForward(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage,
                         Index dim, Index hidden)
    : in(store, rng, name + ".in", stage, dim, hidden), out(store, rng, name + ".out", stage, hidden, dim) {}

EncoderLayer::EncoderLayer(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage,
                           Index dim, int heads)
    : norm_attn(store, name + ".norm_attn", stage, dim),
      norm_ffn(store, name + ".norm_ffn", stage, dim),
      attn(store, rng, name + ".attn", stage, dim, heads),
      ffn(store, rng, name + ".ffn", stage, dim, 4 * dim) {}

Tensor EncoderLayer::operator()(const Tensor& x, const Matrix* mask) const {
  const Tensor h = norm_attn(x);
  const Tensor y = add(x, attn(h, h, mask));
  return add(y, ffn(norm_ffn(y)));
}

TransformerEncoder::TransformerEncoder(ParameterStore& store, Rng& rng, const std::string& name,
                                       const std::string& stage, Index dim, int heads, int num_layers)
    : final_norm(store, name + ".final_norm", stage, dim) {
  for (int i = 0; i < num_layers; ++i)
    layers.emplace_back(store, rng, name + ".layer" + std::to_string(i), stage, dim, heads);
}

Tensor TransformerEncoder::operator()(const Tensor& x, const Matrix* mask) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer(h, mask);
  return final_norm(h);
}

DecoderLayer::DecoderLayer(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage,
                           Index dim, int heads)
    : norm_self(store, name + ".norm_self", stage, dim),
      norm_cross(store, name + ".norm_cross", stage, dim),
      norm_ffn(store, name + ".norm_ffn", stage, dim),
      self_attn(store, rng, name + ".self_attn", stage, dim, heads),
      cross_attn(store, rng, name + ".cross_attn", stage, dim, heads),
      ffn(store, rng, name + ".ffn", stage, dim, 4 * dim) {}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, const Matrix& causal_mask) const {
  const Tensor h = norm_self(x);
  Tensor y = add(x, self_attn(h, h, &causal_mask));
  y = add(y, cross_attn(norm_cross(y), memory, nullptr));
  return add(y, ffn(norm_ffn(y)));
}

TransformerDecoder::TransformerDecoder(ParameterStore& store, Rng& rng, const std::string& name,
                                       const std::string& stage, Index dim, int heads, int num_layers)
    : final_norm(store, name + ".final_norm", stage, dim) {
  for (int i = 0; i < num_layers; ++i)
    layers.emplace_back(store, rng, name + ".layer" + std::to_string(i), stage, dim, heads);
}

Tensor TransformerDecoder::operator()(const Tensor& x, const Tensor& memory) const {
  const Matrix mask = causal_additive_mask(x.rows());
  Tensor h = x;
  for (const auto& layer : layers) h = layer(h, memory, mask);
  return final_norm(h);
}

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
  for (const auto& p : store_.all()) {
    m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
}

std::map<std::string, double> Adam::step(double lr) {
  auto& params = store_.all();
  if (params.size() != m_.size()) throw ContractViolation("optimizer state does not match parameter store");
  ++t_;

  double clip = 1.0;
  if (cfg_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params)
      if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg_.max_grad_norm) clip = cfg_.max_grad_norm / norm;
  }

  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::map<std::string, std::pair<double, double>> stage_sums;  // sum |delta|, element count
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& value = p.tensor.mutable_value();
    const Matrix grad = p.tensor.has_grad() ? Matrix(p.tensor.grad() * clip) : Matrix::Zero(value.rows(), value.cols());
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const Matrix delta =
        (-lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps)).matrix();
    value += delta;
    auto& s = stage_sums[p.stage];
    s.first += delta.cwiseAbs().sum();
    s.second += static_cast<double>(delta.size());
  }
  std::map<std::string, double> out;
  for (const auto& [stage, s] : stage_sums) out[stage] = s.second > 0 ? s.first / s.second : 0.0;
  return out;
}

}  // namespace prccf::nn
