#include "svae/ad/param_store.hpp"

#include "svae/errors.hpp"

namespace svae::ad {

Tensor ParamStore::add(const std::string& name, Tensor tensor) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  if (!tensor.is_leaf()) throw UsageError("parameter '" + name + "' must be a leaf tensor");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(tensor));
  return entries_.back().second;
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

Tensor& ParamStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

const Tensor& ParamStore::at(std::string_view name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::total_elements() const {
  return total_elements([](const std::string&) { return true; });
}

std::size_t ParamStore::total_elements(
    const std::function<bool(const std::string&)>& pred) const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) {
    if (pred(name)) n += t.numel();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& pred) {
  for (auto& [name, t] : entries_) t.set_requires_grad(pred(name));
}

}  // namespace svae::ad
