#include <gtest/gtest.h>

#include "ccfi/analyzer.hpp"
#include "ccfi/harness.hpp"
#include "ccfi/report.hpp"
#include "support.hpp"

using namespace ccfi;
using report::json;

namespace {

void expect_round_trip(const json &j) {
    const auto back = json::parse(j.dump());
    EXPECT_EQ(back, j);
    EXPECT_TRUE(report::schema_errors(back).empty()) << back.dump();
}

} // namespace

TEST(Report, RunRecordsConform) {
    harness::Settings s;
    const auto m = harness::build(harness::load_module_file(test::fixture("hello.ir")), s);
    expect_round_trip(report::to_json(vm::run(m, {}, harness::run_config(s))));
    const auto bad = harness::build(harness::load_module_file(test::fixture("hazards/struct_rawcopy.ir")), s);
    const auto j = report::to_json(vm::run(bad, {}, harness::run_config(s)));
    expect_round_trip(j);
    EXPECT_EQ(j["trap"]["kind"], "ccfi-violation");
}

TEST(Report, HazardRecordsConform) {
    for (const auto &f : test::fixture_files("hazards"))
        for (const auto &h : analysis::analyze_module(harness::load_module_file(f)))
            expect_round_trip(report::to_json(h));
}

TEST(Report, ScenarioReplayBenchRecordsConform) {
    expect_round_trip(report::to_json(harness::run_scenario(harness::builtin_scenarios()[0])));
    harness::ReplayResult r;
    r.trials = 3;
    expect_round_trip(report::to_json(r, 4));
    expect_round_trip(report::to_json(harness::bench_program(
        "hello", harness::load_module_file(test::fixture("hello.ir")), {})));
}

TEST(Report, SchemaCheckCatchesProblems) {
    EXPECT_FALSE(report::schema_errors(json::array()).empty());
    EXPECT_FALSE(report::schema_errors(json{{"type", "nope"}}).empty());
    json j = report::to_json(harness::ReplayResult{}, 4);
    j.erase("frequency");
    EXPECT_FALSE(report::schema_errors(j).empty());
    j = report::to_json(harness::ReplayResult{}, 4);
    j["trials"] = "many";
    EXPECT_FALSE(report::schema_errors(j).empty());
}
