// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>

namespace sparsemix {
namespace {

std::uint64_t name_hash(std::string_view name) {
  // FNV-1a; stable across platforms, unlike std::hash.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr char kMagic[8] = {'S', 'M', 'X', 'P', 'A', 'R', 'M', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated parameter file");
  return v;
}

}  // namespace

std::string block_param_name(std::size_t layer, std::string_view sublayer, std::string_view name) {
  std::string out = "blocks.";
  out += std::to_string(layer);
  out += '.';
  out += sublayer;
  out += '.';
  out += name;
  return out;
}

Tensor& ParamStore::add(std::string name, Tensor value) {
  auto [it, inserted] = tensors_.emplace(std::move(name), std::move(value));
  if (!inserted) throw ConfigError("duplicate parameter '" + it->first + "'");
  return it->second;
}

Tensor& ParamStore::add_normal(std::string name, Shape shape, double stddev, const Rng& rng) {
  Rng stream = rng.fork(name_hash(name));
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = stream.truncated_normal(stddev, 2.0);
  return add(std::move(name), std::move(t));
}

bool ParamStore::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

Tensor& ParamStore::at(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParamStore::at(std::size_t layer, std::string_view sublayer, std::string_view name) {
  return at(block_param_name(layer, sublayer, name));
}

const Tensor& ParamStore::at(std::size_t layer, std::string_view sublayer, std::string_view name) const {
  return at(block_param_name(layer, sublayer, name));
}

std::size_t ParamStore::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, Tensor(t.shape()));
  return out;
}

void ParamStore::set_zero() {
  for (auto& [name, t] : tensors_) t.fill(0.0);
}

void ParamStore::axpy(double scale, const ParamStore& other) {
  for (auto& [name, t] : tensors_) {
    const Tensor& o = other.at(name);
    require_same_shape(t, o, "ParamStore::axpy");
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] += scale * o[i];
  }
}

bool ParamStore::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const auto& kv) { return sparsemix::all_finite(kv.second); });
}

ParamStore ParamStore::subset(std::string_view prefix) const {
  ParamStore out;
  for (const auto& [name, t] : tensors_)
    if (std::string_view(name).starts_with(prefix)) out.tensors_.emplace(name, t);
  return out;
}

void ParamStore::save(const std::filesystem::path& path) const {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(out, tensors_.size());
    for (const auto& [name, t] : tensors_) {
      write_pod<std::uint64_t>(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint64_t>(out, t.rank());
      for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
    throw std::runtime_error(path.string() + " is not a parameter file");
  ParamStore out;
  const auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint64_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto rank = read_pod<std::uint64_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = read_pod<std::uint64_t>(in);
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated parameter file " + path.string());
    out.add(std::move(name), std::move(t));
  }
  return out;
}

GradCheckResult finite_diff_grad_check(const LossFn& loss, const ParamStore& params, double eps,
                                       std::size_t samples, std::uint64_t seed) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw std::invalid_argument("finite-difference eps must be in [1e-7, 1e-4]");
  if (params.size() == 0) throw std::invalid_argument("finite_diff_grad_check: empty parameter store");

  ParamStore grads = params.zeros_like();
  const double base = loss(params, &grads);
  if (!std::isfinite(base)) throw DivergedError("loss is not finite at the check point");

  std::vector<std::string> names;
  for (const auto& [name, t] : params)
    if (t.numel() > 0) names.push_back(name);

  ParamStore probe = params;
  Rng rng(seed);
  GradCheckResult result;
  result.samples = samples;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::string& name = names[rng.uniform_index(names.size())];
    Tensor& t = probe.at(name);
    const std::size_t idx = rng.uniform_index(t.numel());
    const double original = t[idx];
    t[idx] = original + eps;
    const double up = loss(probe, nullptr);
    t[idx] = original - eps;
    const double down = loss(probe, nullptr);
    t[idx] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) throw DivergedError("loss is not finite under perturbation");

    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grads.at(name)[idx];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error || s == 0) {
      result.max_rel_error = std::max(rel, result.max_rel_error);
      result.worst_param = name;
      result.worst_index = idx;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace sparsemix
