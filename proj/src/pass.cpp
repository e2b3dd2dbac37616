#include "ccfi/pass.hpp"

#include <functional>
#include <map>
#include <set>
#include <stdexcept>

namespace ccfi::pass {

using ir::Function;
using ir::Instr;
using ir::Module;
using ir::Op;
using ir::Operand;
using ir::Type;

namespace {

/// Hands out pass-private register names that cannot collide with user
/// registers in the same function.
class Fresh {
public:
    explicit Fresh(const Function &fn) {
        for (const auto &p : fn.params)
            used_.insert(p.name);
        for (const auto &in : fn.body)
            if (!in.dst.empty())
                used_.insert(in.dst);
    }
    std::string operator()(const std::string &hint) {
        while (true) {
            std::string name = "__ccfi." + hint + std::to_string(counter_++);
            if (used_.insert(name).second)
                return name;
        }
    }

private:
    std::set<std::string> used_;
    unsigned counter_ = 0;
};

Instr make(Op op) {
    Instr in;
    in.op = op;
    return in;
}

std::optional<std::uint16_t> sig_for(const PassConfig &config, PointerKind kind, const Type &t) {
    if (!config.type_sig_classes || kind != PointerKind::FunctionPointer || !t.is_fnptr())
        return std::nullopt;
    return signature_hash(t.str());
}

Instr macptr(Operand value, PointerKind kind, Operand addr, std::optional<std::uint16_t> sig,
             int line) {
    Instr in = make(Op::MacPtr);
    in.operands = {std::move(value), std::move(addr)};
    in.kind = kind;
    in.sig = sig;
    in.line = line;
    return in;
}

Instr checkptr(std::string dst, Operand value, PointerKind kind, Operand addr,
               std::optional<std::uint16_t> sig, int line) {
    Instr in = make(Op::CheckPtr);
    in.dst = std::move(dst);
    in.operands = {std::move(value), std::move(addr)};
    in.kind = kind;
    in.sig = sig;
    in.line = line;
    return in;
}

Instr guard(const std::string &checked, const std::string &original, PointerKind kind, int line) {
    Instr in = make(Op::Guard);
    in.operands = {Operand::reg(checked), Operand::reg(original)};
    in.kind = kind;
    in.line = line;
    return in;
}

Instr offset(std::string dst, Operand base, std::uint64_t off, int line) {
    Instr in = make(Op::Offset);
    in.dst = std::move(dst);
    in.operands = {std::move(base), Operand::lit(static_cast<std::int64_t>(off))};
    in.line = line;
    return in;
}

void insert_prologue(Function &fn, std::vector<Instr> prologue) {
    fn.body.insert(fn.body.begin(), prologue.begin(), prologue.end());
}

template <typename MakeCheck> void insert_before_returns(Function &fn, MakeCheck make_check) {
    std::vector<Instr> out;
    out.reserve(fn.body.size() + 4);
    for (auto &in : fn.body) {
        if (in.op == Op::Ret) {
            Instr check = make_check();
            check.line = in.line;
            out.push_back(std::move(check));
        }
        out.push_back(std::move(in));
    }
    fn.body = std::move(out);
}

std::vector<Instr> pad_prologue(const PassConfig &config) {
    if (config.entropy_bits == 0)
        return {};
    Instr pad = make(Op::FramePad);
    pad.index = config.entropy_bits;
    return {pad};
}

void validate(const PassConfig &config) {
    if (config.entropy_bits > PassConfig::kMaxEntropyBits)
        throw std::invalid_argument("entropy must be at most 16 bits");
}

} // namespace

Function instrument_frame(const Function &fn, const PassConfig &config) {
    validate(config);
    Function out = fn;
    auto prologue = pad_prologue(config);
    Instr mac = make(Op::FrameMac);
    mac.dst = std::string(kFrameSlotReg);
    prologue.push_back(std::move(mac));
    insert_prologue(out, std::move(prologue));
    insert_before_returns(out, [] {
        Instr check = make(Op::FrameCheck);
        check.operands = {Operand::reg(std::string(kFrameSlotReg))};
        return check;
    });
    return out;
}

Function leaf_optimize(const Function &fn, const PassConfig &config) {
    validate(config);
    if (!fn.is_leaf())
        throw std::invalid_argument("leaf_optimize: @" + fn.name + " makes calls");
    Function out = fn;
    auto prologue = pad_prologue(config);
    prologue.push_back(make(Op::LeafSave));
    insert_prologue(out, std::move(prologue));
    insert_before_returns(out, [] { return make(Op::LeafCheck); });
    return out;
}

Function instrument_pointer_ops(const Module &m, const Function &fn, const PassConfig &config) {
    Function out = fn;
    Fresh fresh(fn);
    std::vector<Instr> body;
    body.reserve(fn.body.size() * 2);
    for (const auto &in : fn.body) {
        switch (in.op) {
        case Op::Store:
            body.push_back(in);
            if (in.type.is_fnptr())
                body.push_back(macptr(in.operands[0], PointerKind::FunctionPointer, in.operands[1],
                                      sig_for(config, PointerKind::FunctionPointer, in.type),
                                      in.line));
            break;
        case Op::Load:
            if (in.type.is_fnptr()) {
                const std::string raw = fresh("raw");
                Instr load = in;
                load.dst = raw;
                body.push_back(std::move(load));
                body.push_back(checkptr(in.dst, Operand::reg(raw), PointerKind::FunctionPointer,
                                        in.operands[0],
                                        sig_for(config, PointerKind::FunctionPointer, in.type),
                                        in.line));
                body.push_back(guard(in.dst, raw, PointerKind::FunctionPointer, in.line));
            } else {
                body.push_back(in);
            }
            break;
        case Op::NewObj:
            body.push_back(in);
            body.push_back(macptr(Operand::global(in.target2), PointerKind::VTablePointer,
                                  Operand::reg(in.dst), std::nullopt, in.line));
            break;
        case Op::MCall: {
            const std::string raw = fresh("vt");
            const std::string checked = fresh("vtc");
            Instr load = make(Op::LoadVt);
            load.dst = raw;
            load.operands = {in.operands[0]};
            load.line = in.line;
            body.push_back(std::move(load));
            body.push_back(checkptr(checked, Operand::reg(raw), PointerKind::VTablePointer,
                                    in.operands[0], std::nullopt, in.line));
            body.push_back(guard(checked, raw, PointerKind::VTablePointer, in.line));
            Instr call = in;
            call.op = Op::VCall;
            call.operands[0] = Operand::reg(checked);
            body.push_back(std::move(call));
            break;
        }
        default: body.push_back(in); break;
        }
    }
    (void)m;
    out.body = std::move(body);
    return out;
}

Function instrument_copies(const Module &m, const Function &fn, const PassConfig &config) {
    Function out = fn;
    Fresh fresh(fn);
    std::vector<Instr> body;
    body.reserve(fn.body.size());
    for (const auto &in : fn.body) {
        if (in.op != Op::Copy || !ir::contains_control_pointer(m, in.type)) {
            body.push_back(in);
            continue;
        }
        const Operand dst = in.operands[0];
        const Operand src = in.operands[1];
        std::vector<std::string> checked;
        const auto slots = ir::protected_slots(m, in.type);
        for (const auto &slot : slots) {
            const std::string at = fresh("src");
            const std::string raw = fresh("raw");
            const std::string ok = fresh("chk");
            body.push_back(offset(at, src, slot.offset, in.line));
            Instr load = make(Op::Load);
            load.dst = raw;
            load.type = slot.type;
            load.operands = {Operand::reg(at)};
            load.line = in.line;
            body.push_back(std::move(load));
            body.push_back(checkptr(ok, Operand::reg(raw), slot.kind, Operand::reg(at),
                                    sig_for(config, slot.kind, slot.type), in.line));
            body.push_back(guard(ok, raw, slot.kind, in.line));
            checked.push_back(ok);
        }
        body.push_back(in);
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const std::string at = fresh("dst");
            body.push_back(offset(at, dst, slots[i].offset, in.line));
            body.push_back(macptr(Operand::reg(checked[i]), slots[i].kind, Operand::reg(at),
                                  sig_for(config, slots[i].kind, slots[i].type), in.line));
        }
    }
    out.body = std::move(body);
    return out;
}

namespace {

void init_walk(const Module &m, const PassConfig &config, const std::string &global,
               const Type &t, const ir::Initializer &init, std::uint64_t base, Function &fn,
               Fresh &fresh) {
    using K = ir::Initializer::Kind;
    auto address = [&]() -> Operand {
        if (base == 0)
            return Operand::global(global);
        const std::string reg = fresh("g");
        fn.body.push_back(offset(reg, Operand::global(global), base, 0));
        return Operand::reg(reg);
    };
    if (t.is_fnptr()) {
        if (init.kind == K::Func)
            fn.body.push_back(macptr(Operand::func(init.name), PointerKind::FunctionPointer,
                                     address(), sig_for(config, PointerKind::FunctionPointer, t),
                                     0));
        return;
    }
    if (!t.is_record() || init.kind != K::Aggregate)
        return;
    const ir::RecordDef *r = m.find_record(t.record);
    std::size_t first = 0;
    if (r->has_method_table) {
        if (!init.elems.empty() && init.elems[0].kind == K::Table)
            fn.body.push_back(macptr(Operand::global(init.elems[0].name),
                                     PointerKind::VTablePointer, address(), std::nullopt, 0));
        first = 1;
    }
    for (std::size_t i = 0; i < r->fields.size() && first + i < init.elems.size(); ++i)
        init_walk(m, config, global, r->fields[i], init.elems[first + i],
                  base + ir::field_offset(m, *r, i), fn, fresh);
}

} // namespace

Module emit_global_initializers(const Module &m, const PassConfig &config) {
    if (m.find_function(ir::kInitFunction))
        throw std::invalid_argument("module already has " + std::string(ir::kInitFunction));
    Module out = m;
    Function init;
    init.name = std::string(ir::kInitFunction);
    Fresh fresh(init);
    for (const auto &g : m.globals)
        init_walk(m, config, g.name, g.type, g.init, 0, init, fresh);
    if (init.body.empty())
        return out;
    init.body.push_back(make(Op::Ret));
    out.functions.push_back(std::move(init));
    return out;
}

Module instrument_module(const Module &m, const PassConfig &config) {
    validate(config);
    if (!config.any())
        return m;
    Module out = m;
    for (auto &fn : out.functions) {
        const bool leaf = fn.is_leaf();
        if (config.protect_pointers) {
            fn = instrument_pointer_ops(out, fn, config);
            fn = instrument_copies(out, fn, config);
        }
        if (config.protect_stack) {
            fn = (leaf && config.leaf_opt) ? leaf_optimize(fn, config)
                                           : instrument_frame(fn, config);
        } else if (config.entropy_bits > 0) {
            insert_prologue(fn, pad_prologue(config));
        }
    }
    if (config.protect_pointers)
        out = emit_global_initializers(out, config);
    out.attrs.instrumented = true;
    out.attrs.stack = config.protect_stack;
    out.attrs.fptr = config.protect_pointers;
    out.attrs.leaf = config.protect_stack && config.leaf_opt;
    out.attrs.typesig = config.protect_pointers && config.type_sig_classes;
    out.attrs.entropy = config.entropy_bits;
    return out;
}

std::vector<std::string> verify_mediation(const Module &m) {
    std::vector<std::string> problems;
    for (const auto &fn : m.functions) {
        std::map<std::string, std::vector<const Instr *>> defs;
        std::set<std::string> params;
        for (const auto &p : fn.params)
            params.insert(p.name);
        for (const auto &in : fn.body)
            if (!in.dst.empty())
                defs[in.dst].push_back(&in);

        // A register is mediated if every definition is a checkptr, a direct
        // function reference, a call result, a parameter, or a move of a
        // mediated register.
        std::function<bool(const std::string &, std::set<std::string> &)> mediated =
            [&](const std::string &reg, std::set<std::string> &seen) -> bool {
            if (!seen.insert(reg).second)
                return true;
            auto it = defs.find(reg);
            if (it == defs.end())
                return params.count(reg) > 0;
            for (const Instr *d : it->second) {
                switch (d->op) {
                case Op::CheckPtr:
                case Op::Call:
                case Op::ICall:
                case Op::VCall: break;
                case Op::Mov: {
                    const Operand &src = d->operands[0];
                    if (src.kind == Operand::Kind::Func)
                        break;
                    if (src.is_reg() && mediated(src.name, seen))
                        break;
                    return false;
                }
                default: return false;
                }
            }
            return true;
        };

        for (std::size_t i = 0; i < fn.body.size(); ++i) {
            const Instr &in = fn.body[i];
            const std::string where = "@" + fn.name + "#" + std::to_string(i);
            if (in.op == Op::MCall) {
                problems.push_back(where + ": unchecked mcall");
                continue;
            }
            if (in.op != Op::ICall && in.op != Op::VCall)
                continue;
            const Operand &target = in.operands[0];
            if (target.kind == Operand::Kind::Func)
                continue;
            std::set<std::string> seen;
            if (!target.is_reg() || !mediated(target.name, seen))
                problems.push_back(where + ": call target " + target.str() +
                                   " is not the result of a checkptr");
        }
    }
    return problems;
}

} // namespace ccfi::pass
