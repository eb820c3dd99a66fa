#include "dropvid/nn.hpp"

#include <cmath>

namespace dropvid {

Var ParamSet::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw std::logic_error("duplicate parameter " + name);
  Var v = Var::parameter(std::move(init));
  params_.emplace(name, v);
  return v;
}

const Var& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter " + name);
  return it->second;
}

std::vector<Var> ParamSet::vars() const {
  std::vector<Var> v;
  for (const auto& [_, p] : params_) v.push_back(p);
  return v;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

void ParamSet::set_trainable(bool on) {
  for (auto& [_, v] : params_) const_cast<Var&>(v).set_requires_grad(on);
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : params_) const_cast<Var&>(v).zero_grad();
}

void ParamSet::save_to(Archive& a, const std::string& prefix) const {
  for (const auto& [name, v] : params_) a.put(prefix + name, v.value());
}

void ParamSet::load_from(const Archive& a, const std::string& prefix) {
  for (auto& [name, v] : params_) {
    const Tensor& t = a.get(prefix + name);
    if (t.shape() != v.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + prefix + name + ": " + shape_str(t.shape()) +
                               " vs model " + shape_str(v.shape()));
    const_cast<Var&>(v).mutable_value() = t;
  }
}

std::string ParamSet::hash() const {
  Archive a;
  save_to(a);
  return content_hash(a.to_bytes());
}

Tensor he_uniform(Shape shape, int fan_in, Rng& rng, double scale) {
  const double bound = scale > 0.0 ? scale : std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Conv2d::Conv2d(ParamSet& ps, const std::string& name, int cin, int cout, int kernel, ops::ConvSpec spec, Rng& rng,
               bool zero_init, double init_scale)
    : spec_(spec) {
  Shape ws{cout, cin, kernel, kernel};
  Tensor w = zero_init ? Tensor(ws, 0.0) : he_uniform(ws, cin * kernel * kernel, rng, init_scale);
  weight_ = ps.add(name + ".weight", std::move(w));
  bias_ = ps.add(name + ".bias", Tensor(Shape{cout}, 0.0));
}

Adam::Adam(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    m_.emplace_back();
    v_.emplace_back();
    for (const Var& p : g.params) {
      m_.back().emplace_back(p.shape(), 0.0);
      v_.back().emplace_back(p.shape(), 0.0);
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (Var& p : g.params) p.zero_grad();
}

double Adam::step(double max_norm) {
  double sq = 0.0;
  for (const auto& g : groups_)
    for (const Var& p : g.params)
      for (double v : p.grad().values()) sq += v * v;
  const double norm = std::sqrt(sq);
  const double clip = (max_norm > 0.0 && norm > max_norm) ? max_norm / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& g = groups_[gi];
    if (g.lr == 0.0) continue;
    for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
      Var& p = g.params[pi];
      const Tensor& grad = p.grad();
      if (grad.empty()) continue;
      Tensor& m = m_[gi][pi];
      Tensor& v = v_[gi][pi];
      Tensor& w = p.mutable_value();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gr = grad[i] * clip;
        m[i] = b1_ * m[i] + (1.0 - b1_) * gr;
        v[i] = b2_ * v[i] + (1.0 - b2_) * gr * gr;
        w[i] -= g.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }
  return norm;
}

}  // namespace dropvid
