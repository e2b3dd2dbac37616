#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ccfi/analyzer.hpp"
#include "ccfi/harness.hpp"
#include "ccfi/vm.hpp"

namespace ccfi::report {

using nlohmann::json;

/// One JSON object per record; every object carries a "type" member naming
/// its schema: run, hazard, scenario, replay, bench.
json to_json(const vm::RunResult &r);
json to_json(const analysis::Hazard &h);
json to_json(const harness::ScenarioOutcome &o);
json to_json(const harness::ReplayResult &r, unsigned entropy_bits);
json to_json(const harness::BenchRow &row);

/// Problems with a record against its schema; empty when it conforms.
std::vector<std::string> schema_errors(const json &record);

} // namespace ccfi::report
