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

// Probe curves and ablation rows written as CSV and SVG.

#ifndef MLIM_REPORT_HPP_
#define MLIM_REPORT_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "mlim/eval.hpp"

namespace mlim {

std::string format_number(double v);

std::string curve_csv(const ProbeCurve& curve);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Line chart of one or more curves sharing a task.
std::string curves_svg(const std::vector<const ProbeCurve*>& curves, const std::string& title);

nlohmann::json to_json(const ProbeCurve& curve);
ProbeCurve curve_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AblationRow& row);
AblationRow ablation_row_from_json(const nlohmann::json& j);

// Writes probe_<task>_<condition>.{csv,svg}, probe_<task>.svg overlays and
// ablation.csv (when rows are given) into out_dir. Output bytes depend only
// on the inputs.
std::vector<std::filesystem::path> emit_report(const std::vector<ProbeCurve>& curves,
                                               const std::vector<AblationRow>& rows,
                                               const std::filesystem::path& out_dir);

}  // namespace mlim

#endif  // MLIM_REPORT_HPP_
