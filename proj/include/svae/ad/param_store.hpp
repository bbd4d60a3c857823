#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "svae/ad/tensor.hpp"

namespace svae::ad {

/// Named parameters in insertion order. Names are unique; iteration order is
/// the insertion order, so two stores built by the same code iterate alike.
class ParamStore {
 public:
  /// Returns a handle sharing storage with the stored parameter.
  Tensor add(const std::string& name, Tensor tensor);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  std::size_t total_elements(const std::function<bool(const std::string&)>& pred) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();
  /// Enables gradient tracking for names matching `pred`, disables it for the rest.
  void set_trainable(const std::function<bool(const std::string&)>& pred);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace svae::ad
