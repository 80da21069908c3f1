#include "safetypairs/codec.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <zlib.h>

#include <array>
#include <cstring>

namespace sp {

std::string sha256_hex(std::span<const std::uint8_t> data) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(data.data(), data.size(), digest.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest.size() * 2);
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

std::string short_id(std::initializer_list<std::string_view> parts) {
  std::string joined;
  bool first = true;
  for (auto p : parts) {
    if (!first) joined.push_back('\x1f');
    joined.append(p);
    first = false;
  }
  return sha256_hex(joined).substr(0, 16);
}

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) {
    throw Error("base64 payload length is not a multiple of 4");
  }
  if (text.empty()) return {};
  Bytes out(3 * (text.size() / 4));
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) {
    throw Error("malformed base64 payload");
  }
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::optional<ImageFormat> sniff_image(std::span<const std::uint8_t> data) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (data.size() >= sizeof(kPng) && std::memcmp(data.data(), kPng, sizeof(kPng)) == 0) {
    return ImageFormat::png;
  }
  if (data.size() >= 3 && data[0] == 0xff && data[1] == 0xd8 && data[2] == 0xff) {
    return ImageFormat::jpeg;
  }
  return std::nullopt;
}

const char* image_extension(ImageFormat f) { return f == ImageFormat::png ? "png" : "jpg"; }

namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(Bytes& out, const char type[4], const Bytes& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uLong crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + payload.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Bytes make_png(std::uint32_t width, std::uint32_t height, std::uint8_t r, std::uint8_t g, std::uint8_t b,
               std::string_view tag) {
  if (width == 0 || height == 0) {
    throw PreconditionError("png dimensions must be positive");
  }
  Bytes out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

  Bytes ihdr;
  put_u32(ihdr, width);
  put_u32(ihdr, height);
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, deflate, no filter, no interlace
  put_chunk(out, "IHDR", ihdr);

  if (!tag.empty()) {
    Bytes text = {'C', 'o', 'm', 'm', 'e', 'n', 't', 0};
    text.insert(text.end(), tag.begin(), tag.end());
    put_chunk(out, "tEXt", text);
  }

  Bytes raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
  for (std::uint32_t y = 0; y < height; ++y) {
    raw.push_back(0);
    for (std::uint32_t x = 0; x < width; ++x) {
      raw.insert(raw.end(), {r, g, b});
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  Bytes z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error("zlib compression failed");
  }
  z.resize(zlen);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

Bytes tagged_png(std::string_view tag) {
  std::string h = sha256_hex(tag);
  auto byte_at = [&](std::size_t i) { return static_cast<std::uint8_t>(std::stoi(h.substr(2 * i, 2), nullptr, 16)); };
  return make_png(8, 8, byte_at(0), byte_at(1), byte_at(2), tag);
}

}  // namespace sp
