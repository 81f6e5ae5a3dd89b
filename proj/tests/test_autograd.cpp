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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mlim/autograd.hpp"
#include "mlim/error.hpp"
#include "test_util.hpp"

using namespace mlim;

TEST_CASE("forward values of basic ops") {
  const ParamStore none;
  Tape t(none);
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 0, 1, 1, 0;
  Matrix ab(2, 2);
  ab << 2, 1, 4, 3;
  CHECK(matmul(t.constant(a), t.constant(b)).value() == ab);
  CHECK(matmul_nt(t.constant(a), t.constant(b)).value() == a * b.transpose());
  CHECK(sum_all(t.constant(a)).scalar() == 10.0);
  CHECK(relu(t.constant(-a)).value().isZero(0.0));
  CHECK(sigmoid(t.constant(Matrix::Zero(1, 1))).scalar() == 0.5);
  CHECK(std::abs(gelu(t.constant(Matrix::Constant(1, 1, 1.0))).scalar() - 0.8413447460685429) < 1e-12);
  const std::vector<Var> parts = {t.constant(a), t.constant(b)};
  CHECK(concat_cols(parts).cols() == 4);
  CHECK(concat_rows(parts).rows() == 4);
  CHECK(slice_cols(t.constant(a), 1, 1).value()(1, 0) == 4.0);
}

TEST_CASE("space_to_depth and depth_to_space are inverse") {
  const ParamStore none;
  Tape t(none);
  Matrix x(16, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i);
  const Var s = space_to_depth(t.constant(x), 4);
  CHECK(s.rows() == 4);
  CHECK(s.cols() == 12);
  // Cell (0, 0) gathers pixels (0,0), (0,1), (1,0), (1,1) in (dy * 2 + dx) order.
  CHECK(s.value()(0, 0) == x(0, 0));
  CHECK(s.value()(0, 3) == x(1, 0));
  CHECK(s.value()(0, 6) == x(4, 0));
  CHECK(s.value()(0, 9) == x(5, 0));
  CHECK(depth_to_space(s, 2).value() == x);
}

TEST_CASE("parameter gradients land in the caller's store") {
  ParamStore params;
  params.add("w", Matrix::Constant(1, 2, 3.0));
  params.add("frozen", Matrix::Constant(1, 2, 1.0));
  ParamStore grads;
  grads.add("w", Matrix::Zero(1, 2));
  Tape t(params, &grads);
  Var w = t.param("w");
  CHECK(t.param("w").id == w.id);
  Var f = t.param("frozen");
  CHECK(t.requires_grad(w));
  CHECK_FALSE(t.requires_grad(f));
  t.backward(sum_all(matmul_nt(w, f)));
  CHECK(grads.at("w") == Matrix::Constant(1, 2, 1.0));
}

TEST_CASE("gradients accumulate across tapes") {
  ParamStore params;
  params.add("w", Matrix::Constant(1, 1, 2.0));
  ParamStore grads = params.zeros_like();
  for (int i = 0; i < 3; ++i) {
    Tape t(params, &grads);
    Var w = t.param("w");
    t.backward(sum_all(matmul(w, w)));
  }
  CHECK(grads.at("w")(0, 0) == 12.0);
}

TEST_CASE("shape and usage errors") {
  const ParamStore none;
  Tape t(none);
  CHECK_THROWS_AS(matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), ShapeError);
  CHECK_THROWS_AS(add(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(t.param("missing"), Error);
  ParamStore g;
  Tape tracked(none, &g);
  CHECK_THROWS_AS(tracked.backward(tracked.constant(Matrix::Zero(2, 2))), ShapeError);
}

TEST_CASE("dropout is identity at p = 0 and inverted otherwise") {
  const ParamStore none;
  Tape t(none);
  Rng rng(1);
  const Matrix x = Matrix::Constant(50, 40, 1.0);
  CHECK(dropout(t.constant(x), 0.0, rng).value() == x);
  const Matrix y = dropout(t.constant(x), 0.5, rng).value();
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK((y.data()[i] == 0.0 || y.data()[i] == 2.0));
  CHECK(std::abs(y.mean() - 1.0) < 0.1);
}

TEST_CASE("parameter store utilities") {
  ParamStore p;
  p.add("a.x", Matrix::Constant(2, 2, 1.0));
  p.add("b.y", Matrix::Constant(1, 3, 2.0));
  CHECK_THROWS_AS(p.add("a.x", Matrix::Zero(1, 1)), ConfigError);
  CHECK(p.scalar_count() == 7);
  CHECK(p.scalar_count("a.") == 4);
  CHECK(p.squared_norm() == 16.0);
  const ParamStore only_a = p.zeros_like([](const std::string& n) { return n[0] == 'a'; });
  CHECK(only_a.size() == 1);
  ParamStore q = p;
  CHECK(q.fingerprint() == p.fingerprint());
  q.at("b.y")(0, 2) = 2.0000000001;
  CHECK(q.fingerprint() != p.fingerprint());
  CHECK(q.same_layout(p));
}
