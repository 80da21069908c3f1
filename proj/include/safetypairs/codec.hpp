#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "safetypairs/common.hpp"

namespace sp {

/// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);

/// First 16 hex chars of sha256 over the parts joined with '\x1f'.
std::string short_id(std::initializer_list<std::string_view> parts);

std::string base64_encode(std::span<const std::uint8_t> data);
/// Throws sp::Error on malformed input.
Bytes base64_decode(std::string_view text);

enum class ImageFormat { png, jpeg };

/// Detects PNG/JPEG by signature; nullopt when neither.
std::optional<ImageFormat> sniff_image(std::span<const std::uint8_t> data);
const char* image_extension(ImageFormat f);

/// Encodes a solid-colour 8-bit RGB PNG. A non-empty `tag` is stored in an
/// uncompressed tEXt chunk, so distinct tags give distinct files.
Bytes make_png(std::uint32_t width, std::uint32_t height, std::uint8_t r, std::uint8_t g, std::uint8_t b,
               std::string_view tag = {});

/// Deterministic small PNG whose colour and tag derive from `tag`.
Bytes tagged_png(std::string_view tag);

}  // namespace sp
