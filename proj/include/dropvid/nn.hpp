#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dropvid/archive.hpp"
#include "dropvid/ops.hpp"

namespace dropvid {

using Rng = std::mt19937_64;

// Named trainable arrays. Layers hold Vars that share nodes with the set, so
// loading a checkpoint or stepping an optimizer is visible to every layer.
class ParamSet {
public:
  Var add(const std::string& name, Tensor init);
  const Var& at(const std::string& name) const;
  const std::map<std::string, Var>& params() const { return params_; }
  std::size_t count() const;
  std::vector<Var> vars() const;

  void set_trainable(bool on);
  void zero_grad();

  // Entries are written as "<prefix><name>".
  void save_to(Archive& a, const std::string& prefix = "") const;
  // Every parameter must be present with a matching shape.
  void load_from(const Archive& a, const std::string& prefix = "");
  std::string hash() const;

private:
  std::map<std::string, Var> params_;
};

class Conv2d {
public:
  Conv2d() = default;
  // He-uniform weights, zero bias. zero_init leaves weights at zero; a
  // positive init_scale overrides the He scale.
  Conv2d(ParamSet& ps, const std::string& name, int cin, int cout, int kernel, ops::ConvSpec spec, Rng& rng,
         bool zero_init = false, double init_scale = 0.0);

  Var operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, spec_); }

  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

private:
  Var weight_;
  Var bias_;
  ops::ConvSpec spec_;
};

Tensor he_uniform(Shape shape, int fan_in, Rng& rng, double scale = 0.0);

struct ParamGroup {
  std::vector<Var> params;
  double lr = 1e-4;
};

// Adam with bias correction; state is keyed by parameter order in each group.
class Adam {
public:
  explicit Adam(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Rescales gradients so their global L2 norm is at most max_norm (if > 0),
  // then applies one update. Returns the pre-clip norm.
  double step(double max_norm = 0.0);
  void zero_grad();
  long steps() const { return t_; }

private:
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Tensor>> m_;
  std::vector<std::vector<Tensor>> v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace dropvid
