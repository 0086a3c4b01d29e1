#include "medvl/parameters.hpp"

#include <cstring>

#include "medvl/errors.hpp"

namespace medvl {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

Parameter& ParameterStore::add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  p->trainable = trainable;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterStore::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ConfigError("no parameter named " + std::string(name));
}

const Parameter& ParameterStore::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ConfigError("no parameter named " + std::string(name));
}

std::vector<Parameter*> ParameterStore::trainable() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

std::size_t ParameterStore::trainable_element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->trainable) n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

std::uint64_t ParameterStore::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    fnv_mix(h, p->name.data(), p->name.size());
    fnv_mix(h, p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h;
}

}  // namespace medvl
