#include "support.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <memory>
#include <regex>
#include <stdexcept>
#include <sys/wait.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <openssl/evp.h>

namespace ccfi::test {

std::vector<std::filesystem::path> fixture_files(const std::string &dir) {
    std::vector<std::filesystem::path> out;
    for (const auto &e : std::filesystem::directory_iterator(fixture(dir)))
        if (e.path().extension() == ".ir")
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

crypto::Block openssl_aes128(const std::array<std::uint8_t, 16> &key, const crypto::Block &in) {
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(),
                                                                       EVP_CIPHER_CTX_free);
    if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_ecb(), nullptr, key.data(), nullptr) != 1)
        throw std::runtime_error("EVP init failed");
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    crypto::Block out{};
    int len = 0;
    if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, in.data(), 16) != 1 || len != 16)
        throw std::runtime_error("EVP update failed");
    return out;
}

crypto::Block reference_mac(const std::array<std::uint8_t, 16> &key, std::uint64_t pointer,
                            std::uint64_t class_value) {
    crypto::Block in{};
    for (int i = 0; i < 8; ++i) {
        in[i] = static_cast<std::uint8_t>(pointer >> (8 * i));
        in[8 + i] = static_cast<std::uint8_t>(class_value >> (8 * i));
    }
    return openssl_aes128(key, in);
}

crypto::Block from_hex(const std::string &hex) {
    if (hex.size() != 32)
        throw std::invalid_argument("expected 32 hex digits");
    crypto::Block b{};
    for (std::size_t i = 0; i < 16; ++i)
        b[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
    return b;
}

std::vector<std::pair<std::string, int>> expected_hazards(const std::filesystem::path &file) {
    std::ifstream in(file);
    std::string line;
    const std::regex header(R"(^#\s*expect:(.*)$)");
    const std::regex item(R"((\w+)=(\d+))");
    std::vector<std::pair<std::string, int>> out;
    while (std::getline(in, line)) {
        std::smatch m;
        if (!std::regex_match(line, m, header))
            continue;
        const std::string rest = m[1];
        for (std::sregex_iterator it(rest.begin(), rest.end(), item), end; it != end; ++it)
            out.emplace_back((*it)[1], std::stoi((*it)[2]));
    }
    return out;
}

double chi_square_p(double statistic, double dof) {
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), statistic));
}

CliResult run_cli(const std::string &args) {
    const std::string cmd = std::string("'") + CCFI_CLI_PATH + "' " + args + " 2>/dev/null";
    std::unique_ptr<FILE, decltype(&pclose)> pipe(popen(cmd.c_str(), "r"), pclose);
    if (!pipe)
        throw std::runtime_error("popen failed");
    CliResult r;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe.get()))
        r.out.append(buf.data(), n);
    const int raw = pclose(pipe.release());
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

} // namespace ccfi::test
