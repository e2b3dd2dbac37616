#include "ccfi/report.hpp"

#include <map>
#include <utility>

namespace ccfi::report {

json to_json(const vm::RunResult &r) {
    json j;
    j["type"] = "run";
    j["outcome"] = r.halted() ? "halted" : "trapped";
    j["exit"] = r.exit_code;
    if (r.trap) {
        j["trap"] = {{"kind", vm::to_string(r.trap->kind)},
                     {"function", r.trap->function},
                     {"index", r.trap->index},
                     {"pointer_kind", ccfi::to_string(r.trap->pointer_kind)},
                     {"message", r.trap->describe()}};
    } else {
        j["trap"] = nullptr;
    }
    j["output"] = r.output;
    const auto &c = r.counters;
    j["counters"] = {{"steps", c.steps},
                     {"instructions", c.instructions},
                     {"calls", c.calls},
                     {"indirect_calls", c.indirect_calls},
                     {"mac_ops", c.mac_ops},
                     {"macptr", c.macptr_ops},
                     {"checkptr", c.checkptr_ops},
                     {"table_collisions", c.table_collisions},
                     {"hijacks", c.hijacks}};
    json log = json::array();
    for (const auto &e : r.attack_log)
        log.push_back({{"trigger", e.trigger},
                       {"action", e.action},
                       {"status", vm::to_string(e.status)},
                       {"detail", e.detail}});
    j["attack_log"] = std::move(log);
    j["hijacks"] = r.hijacks;
    return j;
}

json to_json(const analysis::Hazard &h) {
    json j;
    j["type"] = "hazard";
    j["kind"] = analysis::to_string(h.kind);
    j["severity"] = analysis::to_string(h.severity());
    j["function"] = h.function;
    j["index"] = h.index;
    j["line"] = h.line;
    j["note"] = h.note;
    if (h.kind == analysis::HazardKind::RawCopyUntyped)
        j["suggestion"] = analysis::suggest_fix(h);
    return j;
}

json to_json(const harness::ScenarioOutcome &o) {
    json j;
    j["type"] = "scenario";
    j["name"] = o.name;
    j["expected"] = harness::to_string(o.expected);
    j["observed"] = harness::to_string(o.observed);
    j["pass"] = o.pass;
    j["detail"] = o.detail;
    j["snapshots"] = o.snapshots;
    j["key_occurrences"] = o.key_occurrences;
    return j;
}

json to_json(const harness::ReplayResult &r, unsigned entropy_bits) {
    json j;
    j["type"] = "replay";
    j["entropy"] = entropy_bits;
    j["trials"] = r.trials;
    j["successes"] = r.successes;
    j["frequency"] = r.frequency;
    j["reference_output"] = r.reference_output;
    return j;
}

json to_json(const harness::BenchRow &row) {
    json j;
    j["type"] = "bench";
    j["program"] = row.program;
    j["baseline_steps"] = row.baseline_steps;
    j["instrumented_steps"] = row.instrumented_steps;
    j["overhead"] = row.overhead();
    j["mac_ops"] = row.mac_ops;
    j["checkptr"] = row.checkptr_ops;
    j["indirect_calls"] = row.indirect_calls;
    j["calls"] = row.calls;
    j["outputs_match"] = row.outputs_match;
    json deltas = json::array();
    for (const auto &d : row.deltas)
        deltas.push_back({{"function", d.function},
                          {"invocations", d.invocations},
                          {"delta_per_call", d.delta_per_call},
                          {"empty", d.empty}});
    j["call_deltas"] = std::move(deltas);
    return j;
}

namespace {

enum class T { String, Int, Number, Bool, Array, Object, NullableObject };

bool matches(const json &v, T t) {
    switch (t) {
    case T::String: return v.is_string();
    case T::Int: return v.is_number_integer();
    case T::Number: return v.is_number();
    case T::Bool: return v.is_boolean();
    case T::Array: return v.is_array();
    case T::Object: return v.is_object();
    case T::NullableObject: return v.is_null() || v.is_object();
    }
    return false;
}

const std::map<std::string, std::vector<std::pair<std::string, T>>> &schemas() {
    static const std::map<std::string, std::vector<std::pair<std::string, T>>> s = {
        {"run",
         {{"outcome", T::String},
          {"exit", T::Int},
          {"trap", T::NullableObject},
          {"output", T::Array},
          {"counters", T::Object},
          {"attack_log", T::Array},
          {"hijacks", T::Array}}},
        {"hazard",
         {{"kind", T::String},
          {"severity", T::String},
          {"function", T::String},
          {"index", T::Int},
          {"line", T::Int},
          {"note", T::String}}},
        {"scenario",
         {{"name", T::String},
          {"expected", T::String},
          {"observed", T::String},
          {"pass", T::Bool},
          {"detail", T::String},
          {"snapshots", T::Int},
          {"key_occurrences", T::Int}}},
        {"replay",
         {{"entropy", T::Int},
          {"trials", T::Int},
          {"successes", T::Int},
          {"frequency", T::Number},
          {"reference_output", T::Array}}},
        {"bench",
         {{"program", T::String},
          {"baseline_steps", T::Int},
          {"instrumented_steps", T::Int},
          {"overhead", T::Number},
          {"mac_ops", T::Int},
          {"checkptr", T::Int},
          {"indirect_calls", T::Int},
          {"calls", T::Int},
          {"outputs_match", T::Bool},
          {"call_deltas", T::Array}}},
    };
    return s;
}

} // namespace

std::vector<std::string> schema_errors(const json &record) {
    std::vector<std::string> errors;
    if (!record.is_object())
        return {"record is not an object"};
    auto type = record.find("type");
    if (type == record.end() || !type->is_string())
        return {"missing string member 'type'"};
    auto schema = schemas().find(type->get<std::string>());
    if (schema == schemas().end())
        return {"unknown record type '" + type->get<std::string>() + "'"};
    for (const auto &[key, t] : schema->second) {
        auto it = record.find(key);
        if (it == record.end())
            errors.push_back("missing member '" + key + "'");
        else if (!matches(*it, t))
            errors.push_back("member '" + key + "' has the wrong type");
    }
    return errors;
}

} // namespace ccfi::report
