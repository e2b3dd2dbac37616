#include "ccfi/typecheck.hpp"

namespace ccfi::ir {

namespace {

class Checker {
public:
    Checker(const Module &m, TypeInfo &info) : m_(m), info_(info) {}

    void check_module() {
        for (const auto &r : m_.records)
            for (const auto &f : r.fields)
                if (f.is_record() && !m_.find_record(f.record))
                    module_error("record " + r.name + " has unknown field type " + f.record);
        for (const auto &t : m_.tables)
            for (const auto &e : t.entries)
                if (!m_.find_function(e))
                    module_error("method table " + t.name + " names unknown function @" + e);
        for (const auto &g : m_.globals)
            check_initializer(g.name, g.type, g.init);
        for (const auto &f : m_.functions)
            check_function(f);
    }

private:
    void module_error(std::string msg) { info_.diagnostics.push_back({"", 0, 0, std::move(msg)}); }

    void check_initializer(const std::string &global, const Type &t, const Initializer &init) {
        using K = Initializer::Kind;
        if (init.kind == K::None)
            return;
        if (t.is_record()) {
            const RecordDef *r = m_.find_record(t.record);
            if (!r) {
                module_error("global " + global + " has unknown type " + t.record);
                return;
            }
            if (init.kind != K::Aggregate) {
                module_error("global " + global + " needs a { ... } initializer");
                return;
            }
            const std::size_t hidden = r->has_method_table ? 1 : 0;
            if (init.elems.size() != r->fields.size() + hidden) {
                module_error("global " + global + " initializer has the wrong number of fields");
                return;
            }
            if (hidden && init.elems[0].kind != K::Table && !(init.elems[0].kind == K::Int &&
                                                               init.elems[0].value == 0))
                module_error("global " + global + " must name its method table first");
            for (std::size_t i = 0; i < r->fields.size(); ++i)
                check_initializer(global, r->fields[i], init.elems[i + hidden]);
            return;
        }
        if (t.is_fnptr()) {
            if (init.kind == K::Func) {
                const Function *f = m_.find_function(init.name);
                if (f && !(f->type() == t))
                    module_error("global " + global + ": @" + init.name + " has type " +
                                 f->signature() + ", expected " + t.str());
            } else if (!(init.kind == K::Int && init.value == 0)) {
                module_error("global " + global + ": function pointer initializer must be @fn or 0");
            }
            return;
        }
        if (init.kind != K::Int)
            module_error("global " + global + ": scalar initializer must be an integer");
    }

    // Register types are inferred to a fixed point first so that a use
    // before a (loop-carried) definition still resolves.
    void check_function(const Function &f) {
        fn_ = &f;
        regs_.clear();
        for (const auto &p : f.params)
            regs_[p.name] = p.type;
        for (int round = 0; round < 8; ++round) {
            bool changed = false;
            for (const auto &in : f.body) {
                if (in.dst.empty() || regs_.count(in.dst))
                    continue;
                if (auto t = result_type(in)) {
                    regs_[in.dst] = *t;
                    changed = true;
                }
            }
            if (!changed)
                break;
        }
        for (index_ = 0; index_ < f.body.size(); ++index_)
            check_instr(f.body[index_]);
        info_.registers[f.name] = regs_;
    }

    std::optional<Type> op_type(const Operand &op) const {
        switch (op.kind) {
        case Operand::Kind::Reg: {
            auto it = regs_.find(op.name);
            if (it == regs_.end())
                return std::nullopt;
            return it->second;
        }
        case Operand::Kind::Imm: return Type::i64();
        case Operand::Kind::Func: {
            const Function *f = m_.find_function(op.name);
            if (!f)
                return std::nullopt;
            return f->type();
        }
        case Operand::Kind::Global: return Type::ptr();
        }
        return std::nullopt;
    }

    std::optional<Type> result_type(const Instr &in) const {
        if (is_compare(in.op))
            return Type::i64();
        if (is_binary(in.op))
            return Type::i64();
        switch (in.op) {
        case Op::Mov:
        case Op::CheckPtr: return op_type(in.operands.at(0));
        case Op::Cast:
        case Op::Load: return in.type;
        case Op::Offset:
        case Op::Field:
        case Op::Alloca:
        case Op::HeapAlloc:
        case Op::LoadVt:
        case Op::NewObj:
        case Op::FrameMac: return Type::ptr();
        case Op::Call: {
            const Function *callee = m_.find_function(in.target);
            if (callee && callee->ret)
                return *callee->ret;
            return std::nullopt;
        }
        case Op::ICall: {
            auto t = op_type(in.operands.at(0));
            if (t && t->is_fnptr() && !t->result.empty())
                return t->result.front();
            return std::nullopt;
        }
        case Op::MCall:
        case Op::VCall: return Type::i64();
        default: return std::nullopt;
        }
    }

    void error(const Instr &in, std::string msg) {
        info_.diagnostics.push_back({fn_->name, index_, in.line, std::move(msg)});
    }

    /// Integer literals stand in for i64 and ptr; everything else must match.
    bool compatible(const Operand &op, const Type &want) const {
        auto t = op_type(op);
        if (!t)
            return false;
        if (op.kind == Operand::Kind::Imm)
            return want.is_int() || want.is_ptr();
        return *t == want;
    }

    bool expect_operand(const Instr &in, std::size_t i, const Type &want, const char *role) {
        const Operand &op = in.operands.at(i);
        auto t = op_type(op);
        if (!t) {
            error(in, "use of undefined register " + op.str());
            return false;
        }
        if (!compatible(op, want)) {
            error(in, std::string(role) + " " + op.str() + " has type " + t->str() + ", expected " +
                          want.str());
            return false;
        }
        return true;
    }

    std::optional<Type> expect_defined(const Instr &in, std::size_t i) {
        auto t = op_type(in.operands.at(i));
        if (!t)
            error(in, "use of undefined register " + in.operands.at(i).str());
        return t;
    }

    void check_args(const Instr &in, std::size_t first, const std::vector<Type> &params,
                    const std::string &callee) {
        const std::size_t given = in.operands.size() - first;
        if (given != params.size()) {
            error(in, "call to " + callee + " passes " + std::to_string(given) +
                          " argument(s), expected " + std::to_string(params.size()));
            return;
        }
        for (std::size_t i = 0; i < params.size(); ++i)
            expect_operand(in, first + i, params[i], "argument");
    }

    void check_dst(const Instr &in) {
        if (in.dst.empty())
            return;
        auto declared = regs_.find(in.dst);
        auto produced = result_type(in);
        if (!produced) {
            error(in, "instruction does not produce a value for %" + in.dst);
            return;
        }
        if (declared != regs_.end() && !(declared->second == *produced))
            error(in, "register %" + in.dst + " redefined with type " + produced->str() +
                          " (was " + declared->second.str() + ")");
    }

    void check_instr(const Instr &in) {
        const Type i64 = Type::i64();
        const Type ptr = Type::ptr();
        if (is_binary(in.op)) {
            if (is_compare(in.op)) {
                auto a = expect_defined(in, 0);
                auto b = expect_defined(in, 1);
                if (a && b && !a->is_scalar())
                    error(in, "comparison of non-scalar values");
                else if (a && b && !(*a == *b) && in.operands[0].kind != Operand::Kind::Imm &&
                         in.operands[1].kind != Operand::Kind::Imm)
                    error(in, "comparison between " + a->str() + " and " + b->str());
            } else {
                expect_operand(in, 0, i64, "operand");
                expect_operand(in, 1, i64, "operand");
            }
            check_dst(in);
            return;
        }
        switch (in.op) {
        case Op::Label: break;
        case Op::Mov:
            expect_defined(in, 0);
            break;
        case Op::Cast: {
            auto from = expect_defined(in, 0);
            if (!in.type.is_scalar()) {
                error(in, "cast to non-scalar type " + in.type.str());
                break;
            }
            if (from && from->is_fnptr() != in.type.is_fnptr())
                info_.casts.push_back({fn_->name, index_, *from, in.type});
            break;
        }
        case Op::Offset:
            expect_operand(in, 0, ptr, "base");
            expect_operand(in, 1, i64, "offset");
            break;
        case Op::Field: {
            expect_operand(in, 0, ptr, "base");
            const RecordDef *r = m_.find_record(in.target);
            if (!r)
                error(in, "unknown record " + in.target);
            else if (in.index < 0 || static_cast<std::size_t>(in.index) >= r->fields.size())
                error(in, "record " + r->name + " has no field " + std::to_string(in.index));
            break;
        }
        case Op::Load:
            if (!in.type.is_scalar())
                error(in, "load of non-scalar type " + in.type.str() + " (use copy)");
            expect_operand(in, 0, ptr, "address");
            break;
        case Op::Store:
            if (!in.type.is_scalar())
                error(in, "store of non-scalar type " + in.type.str() + " (use copy)");
            else
                expect_operand(in, 0, in.type, "stored value");
            expect_operand(in, 1, ptr, "address");
            break;
        case Op::Alloca: break;
        case Op::HeapAlloc: expect_operand(in, 0, i64, "size"); break;
        case Op::HeapFree: expect_operand(in, 0, ptr, "address"); break;
        case Op::Copy:
            if (!in.type.is_record())
                error(in, "copy needs a record type");
            expect_operand(in, 0, ptr, "destination");
            expect_operand(in, 1, ptr, "source");
            break;
        case Op::RawCopy:
        case Op::CcfiRawCopy:
            expect_operand(in, 0, ptr, "destination");
            expect_operand(in, 1, ptr, "source");
            expect_operand(in, 2, i64, "length");
            break;
        case Op::Call: {
            const Function *callee = m_.find_function(in.target);
            if (!callee) {
                error(in, "call to unknown function @" + in.target);
                break;
            }
            std::vector<Type> params;
            for (const auto &p : callee->params)
                params.push_back(p.type);
            check_args(in, 0, params, "@" + in.target);
            break;
        }
        case Op::ICall: {
            auto t = expect_defined(in, 0);
            if (!t)
                break;
            if (!t->is_fnptr()) {
                error(in, "indirect call through non-function-pointer " + in.operands[0].str() +
                              " of type " + t->str());
                break;
            }
            check_args(in, 1, t->params, in.operands[0].str());
            break;
        }
        case Op::MCall:
        case Op::LoadVt:
        case Op::VCall:
            expect_operand(in, 0, ptr, "object");
            for (std::size_t i = 1; i < in.operands.size(); ++i)
                expect_defined(in, i);
            break;
        case Op::NewObj: {
            const RecordDef *r = m_.find_record(in.target);
            if (!r || !r->has_method_table)
                error(in, "new_obj needs a record declared with 'methods'");
            if (!m_.find_table(in.target2))
                error(in, "unknown method table " + in.target2);
            break;
        }
        case Op::Ret:
            if (fn_->ret && in.operands.empty())
                error(in, "ret without a value in function returning " + fn_->ret->str());
            else if (!fn_->ret && !in.operands.empty())
                error(in, "ret with a value in function without a result");
            else if (fn_->ret)
                expect_operand(in, 0, *fn_->ret, "returned value");
            break;
        case Op::Br: expect_operand(in, 0, i64, "condition"); break;
        case Op::Jmp: break;
        case Op::MacPtr:
        case Op::CheckPtr: {
            auto t = expect_defined(in, 0);
            if (t && !t->is_scalar())
                error(in, "protected value must be scalar");
            expect_operand(in, 1, ptr, "storage address");
            break;
        }
        case Op::Guard: expect_defined(in, 0); expect_defined(in, 1); break;
        case Op::AttackPoint: break;
        case Op::Print: expect_defined(in, 0); break;
        case Op::Halt:
            if (!in.operands.empty())
                expect_operand(in, 0, i64, "exit status");
            break;
        case Op::FramePad:
            if (in.index < 0 || in.index > 16)
                error(in, "pad entropy must be within 0..16 bits");
            break;
        case Op::FrameMac:
        case Op::LeafSave:
        case Op::LeafCheck: break;
        case Op::FrameCheck: expect_operand(in, 0, ptr, "MAC slot"); break;
        default: error(in, "unsupported instruction"); break;
        }
        if (is_call(in.op) && !in.dst.empty() && !result_type(in))
            error(in, "callee returns no value for %" + in.dst);
        else
            check_dst(in);
    }

    const Module &m_;
    TypeInfo &info_;
    const Function *fn_ = nullptr;
    std::size_t index_ = 0;
    std::map<std::string, Type> regs_;
};

} // namespace

TypeInfo typecheck(const Module &m) {
    TypeInfo info;
    Checker(m, info).check_module();
    return info;
}

std::optional<Type> operand_type(const Module &m, const TypeInfo &info, const Function &fn,
                                 const Operand &op) {
    switch (op.kind) {
    case Operand::Kind::Reg: {
        auto fit = info.registers.find(fn.name);
        if (fit == info.registers.end())
            return std::nullopt;
        auto it = fit->second.find(op.name);
        if (it == fit->second.end())
            return std::nullopt;
        return it->second;
    }
    case Operand::Kind::Imm: return Type::i64();
    case Operand::Kind::Func: {
        const Function *f = m.find_function(op.name);
        if (!f)
            return std::nullopt;
        return f->type();
    }
    case Operand::Kind::Global: return Type::ptr();
    }
    return std::nullopt;
}

} // namespace ccfi::ir
