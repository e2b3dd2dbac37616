#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ccfi::vm {

/// Address expression: a signed sum of terms.
///
///   123 | 0x7b            integer
///   &name               address of a global or method table
///   @name               address of a function
///   frame[n]            current frame pointer + 8*n
///   %reg                value of a general register, innermost frame first
///   $name               first 8 bytes (little-endian) of a bound value
///   macslot(expr)       MAC-table slot that holds the MAC for expr
struct AddrExpr {
    struct Term {
        enum class Kind : std::uint8_t { Int, Global, Func, Frame, Reg, Var, MacSlot };
        Kind kind = Kind::Int;
        bool negate = false;
        std::int64_t value = 0;
        std::string name;
        std::vector<AddrExpr> inner; // MacSlot argument
    };
    std::vector<Term> terms;
};

/// Bytes to write: `0x...` (at most 16 hex digits) and `u64(expr)` produce an
/// 8-byte little-endian word; `hex:aabb..` is a raw byte string; `name` or
/// `name[a:b]` reuses bytes bound by an earlier read.
struct ValueExpr {
    enum class Kind : std::uint8_t { Word, Bytes, Var };
    Kind kind = Kind::Word;
    AddrExpr word;
    std::vector<std::uint8_t> bytes;
    std::string name;
    std::optional<std::size_t> slice_begin;
    std::optional<std::size_t> slice_end;
};

struct AttackAction {
    enum class Kind : std::uint8_t { Read, Write, Let, Note };
    Kind kind = Kind::Note;
    AddrExpr addr;
    std::uint64_t length = 0;
    std::string name;
    ValueExpr value;
    std::string text; // source form, echoed into the attack log
};

struct AttackTrigger {
    std::string label;
    unsigned occurrence = 0; // 1-based; 0 fires on every occurrence
    std::vector<AttackAction> actions;
};

struct AttackScript {
    std::vector<AttackTrigger> triggers;
    bool empty() const noexcept { return triggers.empty(); }
};

class AttackParseError : public std::runtime_error {
public:
    AttackParseError(int line, const std::string &message)
        : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// One action per line:
///   on <label>[#k]: read <addr> <len> as <name>
///   on <label>[#k]: write <addr> <value>
///   on <label>[#k]: let <name> = <addr>
///   on <label>[#k]: note <text>
/// Consecutive lines with the same trigger are merged in order; `#` starts a
/// comment except directly after a label.
AttackScript parse_attack_script(std::string_view text);

} // namespace ccfi::vm
