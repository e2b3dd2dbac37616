#include "ccfi/analyzer.hpp"

#include <map>
#include <stdexcept>

#include "ccfi/typecheck.hpp"

namespace ccfi::analysis {

using ir::Function;
using ir::Instr;
using ir::Op;
using ir::Operand;
using ir::Type;

std::string_view to_string(HazardKind kind) noexcept {
    switch (kind) {
    case HazardKind::RawCopyUntyped: return "RawCopyUntyped";
    case HazardKind::FnPtrCastToRaw: return "FnPtrCastToRaw";
    case HazardKind::RawCastToFnPtr: return "RawCastToFnPtr";
    case HazardKind::OracleExposure: return "OracleExposure";
    }
    return "?";
}

std::string_view to_string(Severity severity) noexcept {
    return severity == Severity::Warning ? "warning" : "advisory";
}

Severity severity_of(HazardKind kind) noexcept {
    return kind == HazardKind::OracleExposure ? Severity::Advisory : Severity::Warning;
}

bool has_warnings(const std::vector<Hazard> &hazards) noexcept {
    for (const auto &h : hazards)
        if (h.severity() >= Severity::Warning)
            return true;
    return false;
}

namespace {

class FunctionScan {
public:
    FunctionScan(const ir::Module &m, const Function &fn) : m_(m), fn_(fn) {
        for (const auto &in : fn.body)
            if (!in.dst.empty())
                defs_[in.dst].push_back(&in);
    }

    /// Region type a pointer operand refers to; nullopt when erased.
    std::optional<Type> region(const Operand &op) const {
        if (op.kind == Operand::Kind::Global) {
            if (const auto *g = m_.find_global(op.name))
                return g->type;
            return std::nullopt; // method table
        }
        if (!op.is_reg())
            return std::nullopt;
        auto it = defs_.find(op.name);
        if (it == defs_.end())
            return std::nullopt; // parameter
        std::optional<Type> agreed;
        for (const Instr *d : it->second) {
            auto t = region_of_def(*d);
            if (!t || (agreed && !(*agreed == *t)))
                return std::nullopt;
            agreed = t;
        }
        return agreed;
    }

    /// Every definition of `reg` is a checkptr.
    bool checked(const std::string &reg) const {
        auto it = defs_.find(reg);
        if (it == defs_.end())
            return false;
        for (const Instr *d : it->second)
            if (d->op != Op::CheckPtr)
                return false;
        return true;
    }

private:
    std::optional<Type> region_of_def(const Instr &d) const {
        switch (d.op) {
        case Op::Alloca: return d.type;
        case Op::NewObj: return Type::rec(d.target);
        case Op::Field: {
            const auto *r = m_.find_record(d.target);
            if (!r || d.index < 0 || static_cast<std::size_t>(d.index) >= r->fields.size())
                return std::nullopt;
            return r->fields[static_cast<std::size_t>(d.index)];
        }
        case Op::Offset:
            // One level only: offsetting a directly typed base keeps its type.
            if (d.operands[0].kind == Operand::Kind::Global) {
                if (const auto *g = m_.find_global(d.operands[0].name))
                    return g->type;
                return std::nullopt;
            }
            if (d.operands[0].is_reg()) {
                auto it = defs_.find(d.operands[0].name);
                if (it != defs_.end() && it->second.size() == 1) {
                    const Instr &base = *it->second[0];
                    if (base.op == Op::Alloca)
                        return base.type;
                    if (base.op == Op::NewObj)
                        return Type::rec(base.target);
                }
            }
            return std::nullopt;
        case Op::Mov:
            if (d.operands[0].kind == Operand::Kind::Global)
                if (const auto *g = m_.find_global(d.operands[0].name))
                    return g->type;
            return std::nullopt;
        default: return std::nullopt;
        }
    }

    const ir::Module &m_;
    const Function &fn_;
    std::map<std::string, std::vector<const Instr *>> defs_;
};

bool pointer_sized_scalar(const Type &t) { return t.is_int() || t.is_ptr(); }

} // namespace

std::vector<Hazard> analyze_module(const ir::Module &m) {
    const ir::TypeInfo info = ir::typecheck(m);
    std::vector<Hazard> out;

    for (const auto &fn : m.functions) {
        FunctionScan scan(m, fn);

        std::map<std::size_t, const ir::CastEvent *> casts;
        for (const auto &c : info.casts)
            if (c.function == fn.name)
                casts[c.index] = &c;

        for (std::size_t i = 0; i < fn.body.size(); ++i) {
            const Instr &in = fn.body[i];
            Hazard h;
            h.function = fn.name;
            h.index = i;
            h.line = in.line;

            if (in.op == Op::RawCopy) {
                const auto dst = scan.region(in.operands[0]);
                const auto src = scan.region(in.operands[1]);
                auto control = [&](const std::optional<Type> &t) {
                    return t && ir::contains_control_pointer(m, *t);
                };
                if (control(src) || control(dst)) {
                    h.kind = HazardKind::RawCopyUntyped;
                    h.element_type = control(src) ? *src : *dst;
                    h.note = "untyped copy of " + h.element_type->str() +
                             ", which holds control pointers; MACs do not follow the bytes";
                    out.push_back(std::move(h));
                } else if (!src && !dst) {
                    h.kind = HazardKind::RawCopyUntyped;
                    h.note = "both regions are type-erased; any function pointer inside loses its "
                             "MAC";
                    out.push_back(std::move(h));
                }
                continue;
            }

            if (in.op == Op::Cast) {
                auto c = casts.find(i);
                if (c == casts.end())
                    continue;
                const Type &from = c->second->from;
                const Type &to = c->second->to;
                if (from.is_fnptr() && pointer_sized_scalar(to)) {
                    h.kind = HazardKind::FnPtrCastToRaw;
                    h.note = "function pointer cast to " + to.str() +
                             "; stores of the result are not MACed";
                    out.push_back(std::move(h));
                } else if (pointer_sized_scalar(from) && to.is_fnptr()) {
                    h.kind = HazardKind::RawCastToFnPtr;
                    h.note = to.str() + " rebuilt from " + from.str();
                    // A later typed store of the result gets re-MACed by the pass.
                    for (std::size_t j = i + 1; j < fn.body.size(); ++j) {
                        const Instr &u = fn.body[j];
                        if (u.op == Op::Store && u.type.is_fnptr() &&
                            u.operands[0].is_reg() && u.operands[0].name == in.dst) {
                            h.note += "; paired with typed store at #" + std::to_string(j) +
                                      " which re-MACs it";
                            break;
                        }
                    }
                    out.push_back(std::move(h));
                }
                continue;
            }

            if (in.op == Op::MacPtr) {
                const Operand &v = in.operands[0];
                const bool literal = !v.is_reg();
                if (literal || scan.checked(v.name))
                    continue;
                h.kind = HazardKind::OracleExposure;
                h.note = "macptr signs " + v.str() +
                         ", which is neither a literal nor a checkptr result";
                out.push_back(std::move(h));
            }
        }
    }
    return out;
}

std::string suggest_fix(const Hazard &hazard) {
    if (hazard.kind != HazardKind::RawCopyUntyped)
        throw std::invalid_argument("suggest_fix applies only to RawCopyUntyped hazards, not " +
                                    std::string(to_string(hazard.kind)));
    if (hazard.element_type)
        return "replace rawcopy with ccfi_rawcopy(dst, src, len, " + hazard.element_type->str() +
               ")";
    return "replace rawcopy with ccfi_rawcopy(dst, src, len, <type>); the element type is "
           "unknown here and must be supplied by hand";
}

} // namespace ccfi::analysis
