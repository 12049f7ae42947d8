#include "aeval/hashing.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

#include "aeval/error.hpp"

namespace aeval {
namespace {

using Digest = std::array<unsigned char, 32>;

Digest sha256(std::string_view a, std::string_view b = {}, bool with_separator = false) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest init failed");
  }
  EVP_DigestUpdate(ctx.get(), a.data(), a.size());
  if (with_separator) {
    const unsigned char zero = 0;
    EVP_DigestUpdate(ctx.get(), &zero, 1);
    EVP_DigestUpdate(ctx.get(), b.data(), b.size());
  }
  Digest out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), out.data(), &len);
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  const Digest d = sha256(data);
  std::string out;
  out.reserve(64);
  for (unsigned char c : d) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xF]);
  }
  return out;
}

std::uint64_t keyed_hash64(std::string_view key, std::string_view data) {
  const Digest d = sha256(key, data, true);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace aeval
