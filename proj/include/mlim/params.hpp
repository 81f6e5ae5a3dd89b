/*
 * Copyright 2026 The mlim Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MLIM_PARAMS_HPP_
#define MLIM_PARAMS_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mlim {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

// Ordered name -> tensor map. Every learnable tensor of the model lives here,
// and gradient / optimizer-moment buffers use the same container.
class ParamStore {
 public:
  // Throws ConfigError on a duplicate name.
  Matrix& add(const std::string& name, Matrix value);

  bool contains(std::string_view name) const;
  const Matrix& at(std::string_view name) const;
  Matrix& at(std::string_view name);

  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }

  const Matrix& value(size_t i) const { return values_[i]; }
  Matrix& value(size_t i) { return values_[i]; }

  // Total number of scalars, optionally restricted to names with a prefix.
  size_t scalar_count(std::string_view prefix = {}) const;

  // Same names and shapes, all zeros. The filter selects which names to keep.
  ParamStore zeros_like(const std::function<bool(const std::string&)>& keep = {}) const;

  void set_zero();
  // this += scale * other over the names present in this store.
  void add_scaled(const ParamStore& other, double scale);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;

  // FNV-1a over names, shapes and the raw bytes of every value.
  uint64_t fingerprint() const;

  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace mlim

#endif  // MLIM_PARAMS_HPP_
