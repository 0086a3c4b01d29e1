#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace medvl {

/// Row-major so that a (n x d) token matrix regroups to (n/4 x 4d) by a
/// plain reshape of the same memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = false;
};

/// Owns every named tensor of a model. Addresses are stable for the lifetime
/// of the store, so modules keep raw `Parameter*` handles.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  /// Registers a zero-initialised tensor. Throws ConfigError on duplicates.
  Parameter& add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable);

  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  /// Registration order.
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::vector<Parameter*> trainable() const;
  std::size_t trainable_element_count() const;

  void zero_grad();

  /// FNV-1a over names and raw value bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace medvl
