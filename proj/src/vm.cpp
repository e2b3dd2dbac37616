#include "ccfi/vm.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace ccfi::vm {

using ir::Op;
using namespace layout;

namespace {

/// Internal control signal for traps raised while executing an instruction.
struct TrapSignal {
    TrapKind kind;
    std::string message;
    PointerKind pointer_kind = PointerKind::FunctionPointer;
    std::uint64_t address = 0;
};

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t round8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

std::uint64_t round_page(std::uint64_t n) {
    return (n + Memory::kPageSize - 1) / Memory::kPageSize * Memory::kPageSize;
}

std::array<std::uint8_t, 8> le(std::uint64_t v) {
    std::array<std::uint8_t, 8> b{};
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return b;
}

std::uint64_t from_le(std::span<const std::uint8_t> b) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < b.size() && i < 8; ++i)
        v |= std::uint64_t{b[i]} << (8 * i);
    return v;
}

// Upper bound on a single rawcopy; guards the host against absurd lengths.
constexpr std::uint64_t kMaxCopyBytes = 1u << 24;

} // namespace

std::string_view to_string(TrapKind kind) noexcept {
    switch (kind) {
    case TrapKind::CcfiViolation: return "ccfi-violation";
    case TrapKind::MemoryFault: return "memory-fault";
    case TrapKind::TypeFault: return "type-fault";
    case TrapKind::StepLimit: return "step-limit";
    }
    return "?";
}

std::string_view to_string(AttackLogEntry::Status status) noexcept {
    switch (status) {
    case AttackLogEntry::Status::Done: return "done";
    case AttackLogEntry::Status::Rejected: return "rejected";
    case AttackLogEntry::Status::Faulted: return "faulted";
    case AttackLogEntry::Status::Error: return "error";
    }
    return "?";
}

std::string Trap::describe() const {
    std::string where = "@" + function + "#" + std::to_string(index);
    switch (kind) {
    case TrapKind::CcfiViolation:
        return "CCFI violation at " + where + " (" + std::string(ccfi::to_string(pointer_kind)) +
               "): " + message;
    case TrapKind::MemoryFault: return "memory fault at " + where + ": " + message;
    case TrapKind::TypeFault: return "type fault at " + where + ": " + message;
    case TrapKind::StepLimit: return "step limit reached at " + where;
    }
    return message;
}

// ---------------------------------------------------------------------------
// Construction and loading

Machine::ReservedRegisters Machine::make_reserved(std::uint64_t seed) {
    Prng prng(seed);
    const MacKey key = generate_key(prng);
    return ReservedRegisters{prng, key, crypto::Aes128(key.bytes), 0, 0};
}

Machine::Machine(const ir::Module &module, RunConfig config)
    : module_(module), config_(config), table_(memory_, config.mac_table),
      heap_(kHeapBase, kHeapSize, {config.heap_entropy_bits, config.reuse_heap}),
      reserved_(make_reserved(config.seed)) {
    load();
    compile();
}

std::uint64_t Machine::layout_global(const ir::Type &t, const ir::Initializer &init,
                                     std::uint64_t addr) {
    using K = ir::Initializer::Kind;
    switch (init.kind) {
    case K::None: break;
    case K::Int: memory_.poke_u64(addr, static_cast<std::uint64_t>(init.value)); break;
    case K::Func: memory_.poke_u64(addr, function_address(init.name)); break;
    case K::Table: memory_.poke_u64(addr, symbols_.at(init.name)); break;
    case K::Aggregate: {
        const ir::RecordDef *r = t.is_record() ? module_.find_record(t.record) : nullptr;
        if (!r)
            throw std::invalid_argument("aggregate initializer for a non-record global");
        std::size_t first = 0;
        if (r->has_method_table) {
            if (!init.elems.empty())
                layout_global(ir::Type::ptr(), init.elems[0], addr);
            first = 1;
        }
        for (std::size_t i = 0; i < r->fields.size() && first + i < init.elems.size(); ++i)
            layout_global(r->fields[i], init.elems[first + i],
                          addr + ir::field_offset(module_, *r, i));
        break;
    }
    }
    return addr;
}

void Machine::load() {
    for (std::size_t i = 0; i < module_.functions.size(); ++i) {
        const auto &fn = module_.functions[i];
        if (fn.body.size() * kInstrBytes > kFunctionStride)
            throw std::invalid_argument("function @" + fn.name + " is too long to load");
        CFunction cf;
        cf.src = &fn;
        cf.address = kCodeBase + (i + 1) * kFunctionStride;
        funcs_.push_back(std::move(cf));
        func_index_[fn.name] = i;
    }
    memory_.map({"code", kCodeBase, (funcs_.size() + 1) * kFunctionStride, false});

    // Read-only data: method tables, then constant globals.
    std::uint64_t ro = kRodataBase;
    for (const auto &t : module_.tables) {
        symbols_[t.name] = ro;
        ro += std::max<std::uint64_t>(8, t.entries.size() * 8);
    }
    std::uint64_t rw = kDataBase;
    for (const auto &g : module_.globals) {
        const std::uint64_t size = std::max<std::uint64_t>(8, ir::size_of(module_, g.type));
        std::uint64_t &cursor = g.readonly ? ro : rw;
        symbols_[g.name] = cursor;
        cursor += round8(size);
    }
    if (ro > kRodataBase)
        memory_.map({"rodata", kRodataBase, round_page(ro - kRodataBase), false});
    if (rw > kDataBase)
        memory_.map({"data", kDataBase, round_page(rw - kDataBase), true});
    memory_.map({"heap", kHeapBase, kHeapSize, true});
    memory_.map({"stack", kStackBase, kStackSize, true});

    for (const auto &t : module_.tables)
        for (std::size_t i = 0; i < t.entries.size(); ++i)
            memory_.poke_u64(symbols_[t.name] + 8 * i, function_address(t.entries[i]));
    for (const auto &g : module_.globals)
        layout_global(g.type, g.init, symbols_[g.name]);

    main_ = func_index_.at("main");
    if (auto it = func_index_.find(std::string(ir::kInitFunction)); it != func_index_.end())
        init_ = it->second;
}

void Machine::compile() {
    const bool typesig = module_.attrs.typesig;
    for (auto &cf : funcs_) {
        const ir::Function &fn = *cf.src;
        auto reg = [&](const std::string &name) {
            auto [it, inserted] = cf.reg_index.try_emplace(name, cf.reg_count);
            if (inserted)
                ++cf.reg_count;
            return it->second;
        };
        for (const auto &p : fn.params)
            reg(p.name);
        std::unordered_map<std::string, std::size_t> labels;
        for (std::size_t i = 0; i < fn.body.size(); ++i)
            if (fn.body[i].op == Op::Label)
                labels[fn.body[i].target] = i;

        for (const auto &in : fn.body) {
            CInstr ci;
            ci.src = &in;
            for (const auto &op : in.operands) {
                COperand c;
                switch (op.kind) {
                case ir::Operand::Kind::Reg:
                    c.kind = COperand::Kind::Reg;
                    c.reg = reg(op.name);
                    break;
                case ir::Operand::Kind::Imm: c.value = static_cast<std::uint64_t>(op.imm); break;
                case ir::Operand::Kind::Func: c.value = function_address(op.name); break;
                case ir::Operand::Kind::Global: c.value = global_address(op.name); break;
                }
                ci.ops.push_back(c);
            }
            if (!in.dst.empty())
                ci.dst = static_cast<std::int32_t>(reg(in.dst));
            switch (in.op) {
            case Op::Br:
                ci.target_pc = labels.at(in.target);
                ci.target2_pc = labels.at(in.target2);
                break;
            case Op::Jmp: ci.target_pc = labels.at(in.target); break;
            case Op::Call: ci.callee = func_index_.at(in.target); break;
            case Op::Alloca:
                ci.size = round8(ir::size_of(module_, in.type) * static_cast<std::uint64_t>(in.index));
                break;
            case Op::Copy: ci.size = ir::size_of(module_, in.type); break;
            case Op::NewObj:
                ci.size = ir::size_of(module_, ir::Type::rec(in.target));
                ci.target_pc = symbols_.at(in.target2);
                break;
            case Op::Field:
                ci.size = ir::field_offset(module_, *module_.find_record(in.target),
                                           static_cast<std::size_t>(in.index));
                break;
            case Op::CcfiRawCopy:
                ci.size = ir::size_of(module_, in.type);
                ci.slots = ir::protected_slots(module_, in.type);
                for (const auto &s : ci.slots)
                    ci.slot_sigs.push_back(
                        typesig && s.kind == PointerKind::FunctionPointer
                            ? std::optional<std::uint16_t>(signature_hash(s.type.str()))
                            : std::nullopt);
                break;
            default: break;
            }
            cf.code.push_back(std::move(ci));
        }
    }
}

std::uint64_t Machine::function_address(std::string_view name) const {
    auto it = func_index_.find(std::string(name));
    if (it == func_index_.end())
        throw std::out_of_range("unknown function @" + std::string(name));
    return funcs_[it->second].address;
}

std::uint64_t Machine::global_address(std::string_view name) const {
    auto it = symbols_.find(std::string(name));
    if (it == symbols_.end())
        throw std::out_of_range("unknown global &" + std::string(name));
    return it->second;
}

std::uint64_t Machine::frame_pointer() const noexcept {
    return frames_.empty() ? 0 : frames_.back().fp;
}

// ---------------------------------------------------------------------------
// Attacker interface

std::vector<std::uint8_t> Machine::attacker_read(std::uint64_t addr, std::uint64_t len) const {
    if (len > kMaxCopyBytes)
        throw MemoryFault(addr, "attacker read too large at ");
    std::vector<std::uint8_t> out(len);
    memory_.read(addr, out);
    return out;
}

void Machine::attacker_write(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    if (memory_.overlaps_readonly(addr, bytes.size()))
        throw AttackRejected("write to read-only memory at " + hex64(addr));
    memory_.write(addr, bytes);
}

// ---------------------------------------------------------------------------
// Frames

std::uint64_t Machine::value(const Frame &f, const COperand &op) const noexcept {
    return op.kind == COperand::Kind::Reg ? f.regs[op.reg] : op.value;
}

void Machine::set(Frame &f, std::int32_t reg, std::uint64_t v) noexcept {
    if (reg >= 0)
        f.regs[static_cast<std::size_t>(reg)] = v;
}

std::uint64_t Machine::return_address(std::size_t fn, std::size_t pc) const noexcept {
    return funcs_[fn].address + pc * kInstrBytes;
}

std::optional<std::pair<std::size_t, std::size_t>> Machine::decode(std::uint64_t addr) const {
    if (addr < kCodeBase + kFunctionStride)
        return std::nullopt;
    const std::uint64_t rel = addr - kCodeBase;
    const std::uint64_t fn = rel / kFunctionStride - 1;
    const std::uint64_t off = rel % kFunctionStride;
    if (fn >= funcs_.size() || off % kInstrBytes != 0 ||
        off / kInstrBytes >= funcs_[fn].code.size())
        return std::nullopt;
    return std::pair<std::size_t, std::size_t>{fn, off / kInstrBytes};
}

void Machine::check_stack(std::uint64_t sp) const {
    if (sp < kStackBase || sp > kStackTop)
        throw TrapSignal{TrapKind::MemoryFault, "stack pointer " + hex64(sp) + " left the stack",
                         PointerKind::FunctionPointer, sp};
}

void Machine::push(std::uint64_t v) {
    check_stack(sp_ - 8);
    sp_ -= 8;
    memory_.write_u64(sp_, v);
}

void Machine::enter(std::size_t fn, const std::vector<std::uint64_t> &args,
                    std::uint64_t ret_addr) {
    push(ret_addr);
    push(frames_.empty() ? 0 : frames_.back().fp);
    Frame f;
    f.fn = fn;
    f.fp = sp_;
    f.regs.assign(funcs_[fn].reg_count, 0);
    const std::size_t n = std::min(args.size(), funcs_[fn].src->params.size());
    std::copy_n(args.begin(), n, f.regs.begin());
    frames_.push_back(std::move(f));
    ++result_.per_function[funcs_[fn].src->name].invocations;
}

void Machine::call_address(std::uint64_t target, const std::vector<std::uint64_t> &args,
                           std::uint64_t ret_addr) {
    const auto at = decode(target);
    if (!at || at->second != 0)
        throw TrapSignal{TrapKind::MemoryFault,
                         "indirect call to non-function address " + hex64(target),
                         PointerKind::FunctionPointer, target};
    ++result_.counters.calls;
    ++result_.counters.indirect_calls;
    enter(at->first, args, ret_addr);
}

std::optional<Machine::Stop> Machine::do_return(std::uint64_t v) {
    const std::uint64_t fp = frames_.back().fp;
    const std::uint64_t ret = memory_.read_u64(fp + 8);
    const std::uint64_t saved_fp = memory_.read_u64(fp);
    check_stack(fp + 16);
    sp_ = fp + 16;
    const std::string from = funcs_[frames_.back().fn].src->name;
    frames_.pop_back();

    if (ret == kExitAddress) {
        if (in_init_ && frames_.empty()) {
            in_init_ = false;
            sp_ = kStackTop;
            enter(main_, {}, kExitAddress);
            return std::nullopt;
        }
        return Stop{RunResult::Outcome::Halted, static_cast<std::int64_t>(v), std::nullopt};
    }
    if (!frames_.empty()) {
        Frame &caller = frames_.back();
        if (ret == return_address(caller.fn, caller.pc + 1)) {
            set(caller, funcs_[caller.fn].code[caller.pc].dst, v);
            caller.pc += 1;
            caller.fp = saved_fp;
            return std::nullopt;
        }
    }

    // The saved return address no longer matches the call stack.
    const auto at = decode(ret);
    if (!at)
        throw TrapSignal{TrapKind::MemoryFault, "return to non-code address " + hex64(ret),
                         PointerKind::ReturnAddress, ret};
    ++result_.counters.hijacks;
    result_.hijacks.push_back("@" + from + " returned to @" + funcs_[at->first].src->name + "#" +
                              std::to_string(at->second));
    if (frames_.empty())
        frames_.emplace_back();
    Frame &f = frames_.back();
    f.fn = at->first;
    f.pc = at->second;
    f.fp = saved_fp;
    f.regs.assign(funcs_[at->first].reg_count, 0);
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// MAC intrinsics

void Machine::charge_mac() {
    ++result_.counters.mac_ops;
    result_.counters.steps += kMacStepCost;
    auto &pf = result_.per_function[funcs_[frames_.back().fn].src->name];
    ++pf.mac_ops;
    pf.steps += kMacStepCost;
}

ClassTag Machine::class_for(PointerKind kind, std::uint64_t addr,
                            std::optional<std::uint16_t> sig) const {
    try {
        return encode_class(kind, addr, sig);
    } catch (const InvalidAddress &) {
        throw TrapSignal{TrapKind::MemoryFault, "class address " + hex64(addr) + " exceeds 48 bits",
                         kind, addr};
    }
}

void Machine::macptr(std::uint64_t ptr, const ClassTag &cls) {
    charge_mac();
    ++result_.counters.macptr_ops;
    table_.store(cls.payload_address, mac(reserved_.cipher, ptr, cls));
}

std::uint64_t Machine::checkptr(std::uint64_t ptr, const ClassTag &cls) {
    charge_mac();
    ++result_.counters.checkptr_ops;
    const auto stored = table_.load(cls.payload_address);
    if (!stored || !verify(reserved_.cipher, ptr, cls, *stored))
        return 0;
    return ptr;
}

// ---------------------------------------------------------------------------
// Execution

Trap Machine::make_trap(TrapKind kind, std::string message) const {
    Trap t;
    t.kind = kind;
    t.message = std::move(message);
    if (!frames_.empty()) {
        t.function = funcs_[frames_.back().fn].src->name;
        t.index = frames_.back().pc;
    }
    return t;
}

std::optional<Machine::Stop> Machine::step() {
    Frame &f = frames_.back();
    const CFunction &cf = funcs_[f.fn];
    if (f.pc >= cf.code.size())
        throw TrapSignal{TrapKind::TypeFault, "fell off the end of @" + cf.src->name};
    const CInstr &ci = cf.code[f.pc];
    if (ci.src->op == Op::Label) {
        ++f.pc;
        return std::nullopt;
    }
    if (result_.counters.steps >= config_.step_limit)
        throw TrapSignal{TrapKind::StepLimit, "step limit"};
    ++result_.counters.steps;
    ++result_.counters.instructions;
    ++result_.per_function[cf.src->name].steps;
    return exec(f, ci);
}

std::optional<Machine::Stop> Machine::exec(Frame &f, const CInstr &ci) {
    const ir::Instr &in = *ci.src;
    auto arg = [&](std::size_t i) { return value(f, ci.ops.at(i)); };
    auto sarg = [&](std::size_t i) { return static_cast<std::int64_t>(arg(i)); };
    auto call_args = [&](std::size_t from) {
        std::vector<std::uint64_t> a;
        for (std::size_t i = from; i < ci.ops.size(); ++i)
            a.push_back(arg(i));
        return a;
    };
    // Calls leave pc on the call; the return path advances it.
    const std::uint64_t next_ret = return_address(f.fn, f.pc + 1);

    switch (in.op) {
    case Op::Label: break;
    case Op::Mov:
    case Op::Cast: set(f, ci.dst, arg(0)); break;
    case Op::Add: set(f, ci.dst, arg(0) + arg(1)); break;
    case Op::Sub: set(f, ci.dst, arg(0) - arg(1)); break;
    case Op::Mul: set(f, ci.dst, arg(0) * arg(1)); break;
    case Op::Div:
    case Op::Rem: {
        const std::int64_t a = sarg(0), b = sarg(1);
        if (b == 0 || (a == INT64_MIN && b == -1))
            throw TrapSignal{TrapKind::TypeFault, "division by zero or overflow"};
        set(f, ci.dst, static_cast<std::uint64_t>(in.op == Op::Div ? a / b : a % b));
        break;
    }
    case Op::And: set(f, ci.dst, arg(0) & arg(1)); break;
    case Op::Or: set(f, ci.dst, arg(0) | arg(1)); break;
    case Op::Xor: set(f, ci.dst, arg(0) ^ arg(1)); break;
    case Op::Shl: set(f, ci.dst, arg(0) << (arg(1) & 63)); break;
    case Op::Shr: set(f, ci.dst, arg(0) >> (arg(1) & 63)); break;
    case Op::Eq: set(f, ci.dst, sarg(0) == sarg(1)); break;
    case Op::Ne: set(f, ci.dst, sarg(0) != sarg(1)); break;
    case Op::Lt: set(f, ci.dst, sarg(0) < sarg(1)); break;
    case Op::Le: set(f, ci.dst, sarg(0) <= sarg(1)); break;
    case Op::Gt: set(f, ci.dst, sarg(0) > sarg(1)); break;
    case Op::Ge: set(f, ci.dst, sarg(0) >= sarg(1)); break;
    case Op::Offset: set(f, ci.dst, arg(0) + arg(1)); break;
    case Op::Field: set(f, ci.dst, arg(0) + ci.size); break;
    case Op::Load:
    case Op::LoadVt: set(f, ci.dst, memory_.read_u64(arg(0))); break;
    case Op::Store: memory_.write_u64(arg(1), arg(0)); break;
    case Op::Alloca:
        check_stack(sp_ - ci.size);
        sp_ -= ci.size;
        set(f, ci.dst, sp_);
        break;
    case Op::HeapAlloc: {
        const std::uint64_t size = arg(0);
        if (size == 0 || size > kHeapSize)
            throw TrapSignal{TrapKind::MemoryFault, "bad heap allocation size " + hex64(size)};
        set(f, ci.dst, heap_.allocate(size, reserved_.prng));
        break;
    }
    case Op::HeapFree: heap_.release(arg(0)); break;
    case Op::Copy:
    case Op::RawCopy:
    case Op::CcfiRawCopy: {
        const std::uint64_t dst = arg(0), src = arg(1);
        const std::uint64_t len = in.op == Op::Copy ? ci.size : arg(2);
        if (len > kMaxCopyBytes)
            throw TrapSignal{TrapKind::MemoryFault, "copy length " + hex64(len) + " too large"};
        std::vector<std::uint8_t> buf(len);
        memory_.read(src, buf);
        memory_.write(dst, buf);
        if (in.op != Op::CcfiRawCopy || !module_.attrs.fptr || ci.size == 0)
            break;
        // Re-MAC every control pointer that carried a MAC at the source.
        for (std::uint64_t base = 0; base + ci.size <= len; base += ci.size) {
            for (std::size_t s = 0; s < ci.slots.size(); ++s) {
                const auto &slot = ci.slots[s];
                const std::uint64_t from = src + base + slot.offset;
                const std::uint64_t to = dst + base + slot.offset;
                if (!table_.load(from))
                    continue;
                const std::uint64_t ptr = memory_.read_u64(to);
                if (checkptr(ptr, class_for(slot.kind, from, ci.slot_sigs[s])) != ptr)
                    throw TrapSignal{TrapKind::CcfiViolation,
                                     "ccfi_rawcopy source pointer failed its MAC check",
                                     slot.kind};
                macptr(ptr, class_for(slot.kind, to, ci.slot_sigs[s]));
            }
        }
        break;
    }
    case Op::Call:
        ++result_.counters.calls;
        enter(ci.callee, call_args(0), next_ret);
        return std::nullopt;
    case Op::ICall: call_address(arg(0), call_args(1), next_ret); return std::nullopt;
    case Op::MCall: {
        const std::uint64_t table = memory_.read_u64(arg(0));
        call_address(memory_.read_u64(table + 8 * static_cast<std::uint64_t>(in.index)),
                     call_args(1), next_ret);
        return std::nullopt;
    }
    case Op::VCall:
        call_address(memory_.read_u64(arg(0) + 8 * static_cast<std::uint64_t>(in.index)),
                     call_args(1), next_ret);
        return std::nullopt;
    case Op::NewObj: {
        const std::uint64_t obj = heap_.allocate(std::max<std::uint64_t>(8, ci.size), reserved_.prng);
        memory_.write_u64(obj, ci.target_pc);
        set(f, ci.dst, obj);
        break;
    }
    case Op::Ret: return do_return(ci.ops.empty() ? 0 : arg(0));
    case Op::Br: f.pc = arg(0) != 0 ? ci.target_pc : ci.target2_pc; return std::nullopt;
    case Op::Jmp: f.pc = ci.target_pc; return std::nullopt;
    case Op::MacPtr: macptr(arg(0), class_for(in.kind, arg(1), in.sig)); break;
    case Op::CheckPtr: set(f, ci.dst, checkptr(arg(0), class_for(in.kind, arg(1), in.sig))); break;
    case Op::Guard:
        if (arg(0) != arg(1))
            throw TrapSignal{TrapKind::CcfiViolation, "checkptr rejected " + hex64(arg(1)),
                             in.kind};
        break;
    case Op::AttackPoint: {
        fire(in.target, *script_);
        if (hooks_ && hooks_->on_attack_point)
            hooks_->on_attack_point(*this, in.target);
        break;
    }
    case Op::Print: result_.output.push_back(sarg(0)); break;
    case Op::Halt:
        return Stop{RunResult::Outcome::Halted, ci.ops.empty() ? 0 : sarg(0), std::nullopt};
    case Op::FramePad: {
        const std::uint64_t pad =
            RandAllocator::pad_bytes(reserved_.prng, static_cast<unsigned>(in.index));
        check_stack(sp_ - pad);
        sp_ -= pad;
        break;
    }
    case Op::FrameMac: {
        check_stack(sp_ - MacTable::kSlotBytes);
        sp_ -= MacTable::kSlotBytes;
        const std::uint64_t ret = memory_.read_u64(f.fp + 8);
        const std::uint64_t old_fp = memory_.read_u64(f.fp);
        charge_mac();
        const MacValue m = mac(reserved_.cipher, ret, class_for(PointerKind::ReturnAddress, old_fp, {}));
        memory_.write(sp_, m.bytes);
        set(f, ci.dst, sp_);
        break;
    }
    case Op::FrameCheck:
    case Op::LeafCheck: {
        const std::uint64_t ret = memory_.read_u64(f.fp + 8);
        const std::uint64_t old_fp = memory_.read_u64(f.fp);
        bool ok = false;
        if (in.op == Op::FrameCheck) {
            MacValue stored;
            memory_.read(arg(0), stored.bytes);
            charge_mac();
            ok = old_fp <= kAddressMask &&
                 verify(reserved_.cipher, ret,
                        encode_class(PointerKind::ReturnAddress, old_fp), stored);
        } else {
            ok = ret == reserved_.leaf_ret && old_fp == reserved_.leaf_fp;
        }
        if (ok)
            break;
        if (config_.crash_mode == CrashMode::Zero) {
            memory_.write_u64(f.fp + 8, 0);
            memory_.write_u64(f.fp, 0);
            break;
        }
        throw TrapSignal{TrapKind::CcfiViolation,
                         in.op == Op::FrameCheck ? "saved return address or frame pointer altered"
                                                 : "leaf return address or frame pointer altered",
                         PointerKind::ReturnAddress};
    }
    case Op::LeafSave:
        reserved_.leaf_ret = memory_.read_u64(f.fp + 8);
        reserved_.leaf_fp = memory_.read_u64(f.fp);
        break;
    }
    ++f.pc;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Attacker actions

std::uint64_t Machine::eval(const AddrExpr &e) const {
    using K = AddrExpr::Term::Kind;
    std::uint64_t sum = 0;
    for (const auto &t : e.terms) {
        std::uint64_t v = 0;
        switch (t.kind) {
        case K::Int: v = static_cast<std::uint64_t>(t.value); break;
        case K::Global: v = global_address(t.name); break;
        case K::Func: v = function_address(t.name); break;
        case K::Frame: v = frame_pointer() + static_cast<std::uint64_t>(t.value) * 8; break;
        case K::Reg: {
            bool found = false;
            for (auto it = frames_.rbegin(); it != frames_.rend() && !found; ++it) {
                const auto &idx = funcs_[it->fn].reg_index;
                if (auto r = idx.find(t.name); r != idx.end()) {
                    v = it->regs[r->second];
                    found = true;
                }
            }
            if (!found)
                throw std::out_of_range("no live frame has register %" + t.name);
            break;
        }
        case K::Var: {
            auto it = bindings_.find(t.name);
            if (it == bindings_.end())
                throw std::out_of_range("unbound name $" + t.name);
            v = from_le(it->second);
            break;
        }
        case K::MacSlot: v = table_.slot_address(eval(t.inner.at(0))); break;
        }
        sum = t.negate ? sum - v : sum + v;
    }
    return sum;
}

void Machine::run_action(const std::string &trigger, const AttackAction &a) {
    AttackLogEntry entry{trigger, a.text, AttackLogEntry::Status::Done, {}};
    try {
        switch (a.kind) {
        case AttackAction::Kind::Read: {
            const std::uint64_t addr = eval(a.addr);
            auto bytes = attacker_read(addr, a.length);
            entry.detail = a.name + " = " + to_hex(bytes);
            bindings_[a.name] = std::move(bytes);
            break;
        }
        case AttackAction::Kind::Write: {
            const std::uint64_t addr = eval(a.addr);
            std::vector<std::uint8_t> bytes;
            switch (a.value.kind) {
            case ValueExpr::Kind::Word: {
                const auto w = le(eval(a.value.word));
                bytes.assign(w.begin(), w.end());
                break;
            }
            case ValueExpr::Kind::Bytes: bytes = a.value.bytes; break;
            case ValueExpr::Kind::Var: {
                auto it = bindings_.find(a.value.name);
                if (it == bindings_.end())
                    throw std::out_of_range("unbound name " + a.value.name);
                const auto &src = it->second;
                const std::size_t b = a.value.slice_begin.value_or(0);
                const std::size_t e = a.value.slice_end.value_or(src.size());
                if (b > e || e > src.size())
                    throw std::out_of_range("slice out of range for " + a.value.name);
                bytes.assign(src.begin() + static_cast<std::ptrdiff_t>(b),
                             src.begin() + static_cast<std::ptrdiff_t>(e));
                break;
            }
            }
            attacker_write(addr, bytes);
            entry.detail = hex64(addr) + " <- " + to_hex(bytes);
            break;
        }
        case AttackAction::Kind::Let: {
            const std::uint64_t v = eval(a.addr);
            const auto w = le(v);
            bindings_[a.name].assign(w.begin(), w.end());
            entry.detail = a.name + " = " + hex64(v);
            break;
        }
        case AttackAction::Kind::Note: entry.detail = a.name; break;
        }
    } catch (const AttackRejected &e) {
        entry.status = AttackLogEntry::Status::Rejected;
        entry.detail = e.what();
    } catch (const MemoryFault &e) {
        entry.status = AttackLogEntry::Status::Faulted;
        entry.detail = e.what();
    } catch (const std::exception &e) {
        entry.status = AttackLogEntry::Status::Error;
        entry.detail = e.what();
    }
    result_.attack_log.push_back(std::move(entry));
}

void Machine::fire(std::string_view label, const AttackScript &script) {
    const unsigned n = ++occurrences_[std::string(label)];
    for (const auto &t : script.triggers) {
        if (t.label != label || (t.occurrence != 0 && t.occurrence != n))
            continue;
        const std::string trigger = t.label + "#" + std::to_string(n);
        for (const auto &a : t.actions)
            run_action(trigger, a);
    }
}

// ---------------------------------------------------------------------------

RunResult Machine::run(const AttackScript &script, const RunHooks &hooks) {
    script_ = &script;
    hooks_ = &hooks;
    result_ = RunResult{};
    frames_.clear();
    sp_ = kStackTop;
    occurrences_.clear();
    bindings_.clear();

    std::optional<Stop> stop;
    try {
        in_init_ = init_.has_value();
        enter(init_ ? *init_ : main_, {}, kExitAddress);
    } catch (const TrapSignal &t) {
        stop = Stop{RunResult::Outcome::Trapped, 0, make_trap(t.kind, t.message)};
    }
    while (!stop) {
        try {
            stop = step();
        } catch (const TrapSignal &t) {
            Trap trap = make_trap(t.kind, t.message);
            trap.pointer_kind = t.pointer_kind;
            trap.address = t.address;
            stop = Stop{RunResult::Outcome::Trapped, 0, trap};
        } catch (const MemoryFault &e) {
            Trap trap = make_trap(TrapKind::MemoryFault, e.what());
            trap.address = e.address();
            stop = Stop{RunResult::Outcome::Trapped, 0, trap};
        }
    }
    result_.outcome = stop->outcome;
    result_.exit_code = stop->exit_code;
    result_.trap = stop->trap;
    result_.counters.table_collisions = table_.stats().collisions;
    script_ = nullptr;
    hooks_ = nullptr;
    return std::move(result_);
}

RunResult run(const ir::Module &module, const AttackScript &script, const RunConfig &config,
              const RunHooks &hooks) {
    Machine m(module, config);
    return m.run(script, hooks);
}

} // namespace ccfi::vm
