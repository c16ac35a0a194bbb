#include "stylenerf/nn.hpp"

#include "stylenerf/error.hpp"
#include "stylenerf/grid_maps.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace snerf {

double Rng::uniform() {
  // 53 random bits -> [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ArgumentError("Rng::index of empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (!is) throw ArgumentError("invalid rng state");
}

namespace nn {

Var ParamStore::add(const std::string& name, Mat init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = ad::leaf(std::move(init), true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

std::vector<Var> ParamStore::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

Var ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return {};
  return entries_[it->second].second;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.second.value().size());
  return n;
}

void ParamStore::copy_from(const ParamStore& other) {
  if (other.entries_.size() != entries_.size()) throw ConfigError("parameter sets differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [name, src] = other.entries_[i];
    if (name != entries_[i].first) throw ConfigError("parameter name mismatch: " + name);
    auto& dst = entries_[i].second;
    if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
      throw ConfigError("parameter shape mismatch: " + name);
    }
    dst.mutable_value() = src.value();
  }
}

Mat randn(Index rows, Index cols, Rng& rng, double scale) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

Linear Linear::create(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng,
                      bool with_bias, double bias_init, double lr_mult) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", randn(in, out, rng, 1.0 / lr_mult));
  l.weight_gain = lr_mult / std::sqrt(static_cast<double>(in));
  if (with_bias) {
    l.bias = store.add(name + ".bias", Mat::Constant(1, out, bias_init));
    l.bias_gain = lr_mult;
  }
  return l;
}

Var Linear::effective_weight() const { return ad::scale(weight, weight_gain); }

Var Linear::forward(const Var& x) const {
  if (x.cols() != in) {
    throw ConfigError("linear layer expects " + std::to_string(in) + " inputs, got " +
                      std::to_string(x.cols()));
  }
  Var y = ad::scale(ad::matmul(x, weight), weight_gain);
  if (bias.defined()) y = ad::add(y, ad::scale(bias, bias_gain));
  return y;
}

Conv3x3 Conv3x3::create(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng,
                        bool with_bias) {
  Conv3x3 c;
  c.in = in;
  c.out = out;
  c.weight = store.add(name + ".weight", randn(9 * in, out, rng, 1.0));
  c.weight_gain = 1.0 / std::sqrt(static_cast<double>(9 * in));
  if (with_bias) c.bias = store.add(name + ".bias", Mat::Zero(1, out));
  return c;
}

Var Conv3x3::forward(const Var& x, Index batch, Index h, Index w, int stride) const {
  if (x.cols() != in || x.rows() != batch * h * w) {
    throw ConfigError("conv3x3 input shape mismatch");
  }
  const Index oh = stride == 2 ? h / 2 : h;
  const Index ow = stride == 2 ? w / 2 : w;
  Var cols = ad::reshape(ad::apply(grid::im2col3x3(batch, h, w, stride), x), batch * oh * ow,
                         9 * in);
  Var y = ad::scale(ad::matmul(cols, weight), weight_gain);
  if (bias.defined()) y = ad::add(y, bias);
  return y;
}

void Adam::step(const std::vector<Var>& params, const std::vector<Var>& grads) {
  if (params.size() != grads.size()) throw ArgumentError("Adam: params/grads size mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Mat::Zero(p.rows(), p.cols()));
      v_.push_back(Mat::Zero(p.rows(), p.cols()));
    }
  }
  if (m_.size() != params.size()) throw ArgumentError("Adam: parameter count changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = grads[i].value();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Var p = params[i];
    p.mutable_value().array() -=
        cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

Var lrelu(const Var& x, double gain) {
  Var y = ad::leaky_relu(x, kLeakySlope);
  return gain == 1.0 ? y : ad::scale(y, gain);
}

}  // namespace nn
}  // namespace snerf
