#pragma once

#include <map>
#include <string>
#include <vector>

#include "ccfi/ir.hpp"

namespace ccfi::ir {

struct Diagnostic {
    std::string function;
    std::size_t index = 0; // instruction index in the body
    int line = 0;
    std::string message;
};

/// A cast between a function pointer and a non-function scalar. Legal IR,
/// but exactly the spot where automatic re-MACing loses track of a pointer.
struct CastEvent {
    std::string function;
    std::size_t index = 0;
    Type from;
    Type to;
};

struct TypeInfo {
    std::vector<Diagnostic> diagnostics;
    std::vector<CastEvent> casts;
    /// function name -> register name -> static type
    std::map<std::string, std::map<std::string, Type>> registers;

    bool ok() const noexcept { return diagnostics.empty(); }
};

TypeInfo typecheck(const Module &m);

/// Type of an operand inside `fn`, or nullopt for an unknown register.
std::optional<Type> operand_type(const Module &m, const TypeInfo &info, const Function &fn,
                                 const Operand &op);

} // namespace ccfi::ir
