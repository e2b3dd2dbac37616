#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccfi/aes128.hpp"
#include "ccfi/ir.hpp"

namespace ccfi::test {

inline std::filesystem::path source_dir() { return CCFI_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string &rel) {
    return source_dir() / "fixtures" / rel;
}

/// *.ir files in a fixture directory, sorted by name.
std::vector<std::filesystem::path> fixture_files(const std::string &dir);

/// AES-128 single-block encryption through OpenSSL, used as the reference.
crypto::Block openssl_aes128(const std::array<std::uint8_t, 16> &key, const crypto::Block &in);

/// Reference MAC: AES over the pointer and class words, little-endian.
crypto::Block reference_mac(const std::array<std::uint8_t, 16> &key, std::uint64_t pointer,
                            std::uint64_t class_value);

crypto::Block from_hex(const std::string &hex);

/// Counts of `# expect: Kind=N ...` in a fixture header.
std::vector<std::pair<std::string, int>> expected_hazards(const std::filesystem::path &file);

/// Upper-tail probability of the chi-square distribution.
double chi_square_p(double statistic, double dof);

struct CliResult {
    int status = -1;
    std::string out;
};

/// Runs the command-line tool with `args` (shell-quoted by the caller);
/// stdout is captured, stderr discarded.
CliResult run_cli(const std::string &args);

} // namespace ccfi::test
