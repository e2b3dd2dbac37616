#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccfi/ir.hpp"

namespace ccfi::analysis {

enum class HazardKind : std::uint8_t {
    RawCopyUntyped, // rawcopy over a region holding control pointers, or fully type-erased
    FnPtrCastToRaw,
    RawCastToFnPtr,
    OracleExposure, // macptr over a value the attacker may steer
};

enum class Severity : std::uint8_t { Advisory, Warning };

std::string_view to_string(HazardKind kind) noexcept;
std::string_view to_string(Severity severity) noexcept;
Severity severity_of(HazardKind kind) noexcept;

struct Hazard {
    HazardKind kind = HazardKind::RawCopyUntyped;
    std::string function;
    std::size_t index = 0;
    int line = 0;
    std::string note;
    /// RawCopyUntyped only: the element type the copy should have carried,
    /// when a region type is known on either side.
    std::optional<ir::Type> element_type;

    Severity severity() const noexcept { return severity_of(kind); }
    friend bool operator==(const Hazard &, const Hazard &) = default;
};

/// Intraprocedural scan of a source (uninstrumented) module. Region types
/// propagate one level: a register defined by alloca, &global, field,
/// offset or new_obj has a known region type; heap_alloc results,
/// parameters and loaded pointers are type-erased. Reports are ordered by
/// function, then instruction index.
std::vector<Hazard> analyze_module(const ir::Module &m);

/// Rewrite advice for a RawCopyUntyped hazard. Throws std::invalid_argument
/// for any other kind.
std::string suggest_fix(const Hazard &hazard);

bool has_warnings(const std::vector<Hazard> &hazards) noexcept;

} // namespace ccfi::analysis
