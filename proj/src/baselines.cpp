#include "claw/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace claw {

namespace {

constexpr double kSigmaInit = 1e-3;

double rho_for_sigma(double sigma) { return std::log(std::expm1(sigma)); }

std::vector<double> glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(in + out));
  std::vector<double> g(in * out);
  for (auto& v : g) v = sd * rng.normal();
  return g;
}

}  // namespace

MeanFieldLayer::MeanFieldLayer(std::size_t in, std::size_t out, Activation act, Rng& rng)
    : in_(in), out_(out), act_(act) {
  w_mu_ = Tensor::from(glorot(in, out, rng), {in, out}, true);
  w_rho_ = Tensor::full({in, out}, rho_for_sigma(kSigmaInit), true);
  b_mu_ = Tensor::zeros({out}, true);
  b_rho_ = Tensor::full({out}, rho_for_sigma(kSigmaInit), true);
}

Tensor MeanFieldLayer::forward(const Tensor& x, const Tensor& eps_w, const Tensor& eps_b) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_) {
    throw ShapeError("mean-field layer: input " + shape_str(x.shape()) + " does not match in=" +
                     std::to_string(in_));
  }
  Tensor z;
  if (eps_w.defined()) {
    Tensor w = add(w_mu_, mul(softplus(w_rho_), eps_w));
    Tensor b = add(b_mu_, mul(softplus(b_rho_), eps_b));
    z = add_rowvec(matmul(x, w), b);
  } else {
    z = add_rowvec(matmul(x, w_mu_), b_mu_);
  }
  return act_ == Activation::relu ? relu(z) : z;
}

Tensor MeanFieldLayer::kl(const MfPrior* prev) const {
  auto term = [](const Tensor& mu, const Tensor& rho, const Tensor& pm, const Tensor& pv) {
    Tensor var = square(softplus(rho));
    Tensor diff = sub(mu, pm);
    Tensor logs = mul(sub(log(pv), log(var)), 0.5);
    Tensor quad = sub(div(add(var, square(diff)), mul(pv, 2.0)), 0.5);
    return sum(add(logs, quad));
  };
  Tensor pwm, pwv, pbm, pbv;
  if (prev) {
    pwm = Tensor::from(prev->w_mean, {in_, out_});
    pwv = Tensor::from(prev->w_var, {in_, out_});
    pbm = Tensor::from(prev->b_mean, {out_});
    pbv = Tensor::from(prev->b_var, {out_});
  } else {
    pwm = Tensor::zeros({in_, out_});
    pwv = Tensor::full({in_, out_}, 1.0);
    pbm = Tensor::zeros({out_});
    pbv = Tensor::full({out_}, 1.0);
  }
  return add(term(w_mu_, w_rho_, pwm, pwv), term(b_mu_, b_rho_, pbm, pbv));
}

MfPrior MeanFieldLayer::prior() const {
  MfPrior pr;
  pr.w_mean = w_mu_.values();
  pr.b_mean = b_mu_.values();
  pr.w_var.resize(in_ * out_);
  pr.b_var.resize(out_);
  const auto& wr = w_rho_.values();
  for (std::size_t i = 0; i < wr.size(); ++i) {
    const double sd = std::log1p(std::exp(-std::abs(wr[i]))) + std::max(wr[i], 0.0);
    pr.w_var[i] = sd * sd;
  }
  const auto& br = b_rho_.values();
  for (std::size_t i = 0; i < br.size(); ++i) {
    const double sd = std::log1p(std::exp(-std::abs(br[i]))) + std::max(br[i], 0.0);
    pr.b_var[i] = sd * sd;
  }
  return pr;
}

MeanFieldLayer MeanFieldLayer::clone() const {
  MeanFieldLayer c = *this;
  c.w_mu_ = Tensor::from(w_mu_.values(), w_mu_.shape(), true);
  c.w_rho_ = Tensor::from(w_rho_.values(), w_rho_.shape(), true);
  c.b_mu_ = Tensor::from(b_mu_.values(), b_mu_.shape(), true);
  c.b_rho_ = Tensor::from(b_rho_.values(), b_rho_.shape(), true);
  return c;
}

MeanFieldModel::MeanFieldModel(std::size_t input_dim, std::vector<std::size_t> hidden_widths,
                               HeadMode head_mode, std::uint64_t init_seed)
    : input_dim_(input_dim), head_mode_(head_mode), init_seed_(init_seed) {
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    Rng rng(derive_seed(init_seed_, 100 + i));
    hidden_.emplace_back(prev, hidden_widths[i], Activation::relu, rng);
    prev = hidden_widths[i];
  }
}

void MeanFieldModel::ensure_head(int task, std::size_t classes) {
  const int key = head_key(task);
  if (heads_.count(key)) return;
  const std::size_t in = hidden_.empty() ? input_dim_ : hidden_.back().out();
  Rng rng(derive_seed(init_seed_, 1000 + static_cast<std::uint64_t>(key)));
  heads_.emplace(key, MeanFieldLayer(in, classes, Activation::identity, rng));
}

MeanFieldLayer& MeanFieldModel::head(int task) {
  auto it = heads_.find(head_key(task));
  if (it == heads_.end()) throw std::out_of_range("no head for task " + std::to_string(task));
  return it->second;
}

Tensor MeanFieldModel::forward(const Tensor& x, int task,
                               const std::vector<std::pair<Tensor, Tensor>>& eps) const {
  if (!eps.empty() && eps.size() != depth()) {
    throw std::invalid_argument("forward: " + std::to_string(eps.size()) + " noise pairs for " +
                                std::to_string(depth()) + " layers");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    h = eps.empty() ? hidden_[i].forward(h) : hidden_[i].forward(h, eps[i].first, eps[i].second);
  }
  auto it = heads_.find(head_key(task));
  if (it == heads_.end()) throw std::out_of_range("no head for task " + std::to_string(task));
  return eps.empty() ? it->second.forward(h)
                     : it->second.forward(h, eps.back().first, eps.back().second);
}

Tensor MeanFieldModel::kl(const MfSnapshot* prev, int task) const {
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    const MfPrior* pr = (prev && i < prev->hidden.size()) ? &prev->hidden[i] : nullptr;
    total = add(total, hidden_[i].kl(pr));
  }
  const int key = head_key(task);
  auto it = heads_.find(key);
  if (it == heads_.end()) throw std::out_of_range("no head for task " + std::to_string(task));
  const MfPrior* pr = (prev && prev->heads.count(key)) ? &prev->heads.at(key) : nullptr;
  total = add(total, it->second.kl(pr));
  return total;
}

std::vector<Tensor*> MeanFieldModel::trainable(int task) {
  std::vector<Tensor*> params;
  for (auto& layer : hidden_) {
    for (Tensor* t : layer.trainable()) params.push_back(t);
  }
  for (Tensor* t : head(task).trainable()) params.push_back(t);
  return params;
}

MfSnapshot MeanFieldModel::snapshot() const {
  MfSnapshot snap;
  for (const auto& layer : hidden_) snap.hidden.push_back(layer.prior());
  for (const auto& [key, layer] : heads_) snap.heads.emplace(key, layer.prior());
  return snap;
}

MeanFieldModel MeanFieldModel::clone() const {
  MeanFieldModel c(input_dim_, {}, head_mode_, init_seed_);
  for (const auto& layer : hidden_) c.hidden_.push_back(layer.clone());
  for (const auto& [key, layer] : heads_) c.heads_.emplace(key, layer.clone());
  return c;
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng)
    : in_(in), out_(out), act_(act) {
  w_ = Tensor::from(glorot(in, out, rng), {in, out}, true);
  b_ = Tensor::zeros({out}, true);
}

Tensor DenseLayer::forward(const Tensor& x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_) {
    throw ShapeError("dense layer: input " + shape_str(x.shape()) + " does not match in=" +
                     std::to_string(in_));
  }
  Tensor z = add_rowvec(matmul(x, w_), b_);
  return act_ == Activation::relu ? relu(z) : z;
}

DenseLayer DenseLayer::clone() const {
  DenseLayer c = *this;
  c.w_ = Tensor::from(w_.values(), w_.shape(), true);
  c.b_ = Tensor::from(b_.values(), b_.shape(), true);
  return c;
}

DeterministicModel::DeterministicModel(std::size_t input_dim,
                                       std::vector<std::size_t> hidden_widths, HeadMode head_mode,
                                       std::uint64_t init_seed)
    : input_dim_(input_dim), head_mode_(head_mode), init_seed_(init_seed) {
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    Rng rng(derive_seed(init_seed_, 100 + i));
    hidden_.emplace_back(prev, hidden_widths[i], Activation::relu, rng);
    prev = hidden_widths[i];
  }
}

void DeterministicModel::ensure_head(int task, std::size_t classes) {
  const int key = head_key(task);
  if (heads_.count(key)) return;
  const std::size_t in = hidden_.empty() ? input_dim_ : hidden_.back().out();
  Rng rng(derive_seed(init_seed_, 1000 + static_cast<std::uint64_t>(key)));
  heads_.emplace(key, DenseLayer(in, classes, Activation::identity, rng));
}

DenseLayer& DeterministicModel::head(int task) {
  auto it = heads_.find(head_key(task));
  if (it == heads_.end()) throw std::out_of_range("no head for task " + std::to_string(task));
  return it->second;
}

Tensor DeterministicModel::forward(const Tensor& x, int task) const {
  Tensor h = x;
  for (const auto& layer : hidden_) h = layer.forward(h);
  auto it = heads_.find(head_key(task));
  if (it == heads_.end()) throw std::out_of_range("no head for task " + std::to_string(task));
  return it->second.forward(h);
}

std::vector<Tensor*> DeterministicModel::trainable(int task) {
  std::vector<Tensor*> params;
  for (auto& layer : hidden_) {
    for (Tensor* t : layer.trainable()) params.push_back(t);
  }
  for (Tensor* t : head(task).trainable()) params.push_back(t);
  return params;
}

std::vector<std::pair<std::string, Tensor*>> DeterministicModel::named_trainable(int task) {
  std::vector<std::pair<std::string, Tensor*>> params;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    params.emplace_back("hidden." + std::to_string(i) + ".w", &hidden_[i].w());
    params.emplace_back("hidden." + std::to_string(i) + ".b", &hidden_[i].b());
  }
  const int key = head_key(task);
  params.emplace_back("head." + std::to_string(key) + ".w", &head(task).w());
  params.emplace_back("head." + std::to_string(key) + ".b", &head(task).b());
  return params;
}

}  // namespace claw
