#pragma once

// Command-line driver: synth | pretrain | train | forecast | evaluate | ablate.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include "episteer/training.hpp"

#include <filesystem>
#include <vector>

namespace episteer {

int run_cli(int argc, const char* const* argv);

// Forecast CSV: `region,as_of,target_week,horizon,pred,source_pred`.
void write_forecasts_csv(std::span<const ForecastRow> rows, const std::filesystem::path& path);
std::vector<ForecastRow> read_forecasts_csv(const std::filesystem::path& path);

// Flattened dotted keys ("kd.alpha") of a nested JSON object, and back.
nlohmann::json flatten_json(const nlohmann::json& j);
nlohmann::json unflatten_json(const nlohmann::json& flat);

}  // namespace episteer
