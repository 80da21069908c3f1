#include <doctest.h>

#include "safetypairs/codec.hpp"

using namespace sp;

TEST_CASE("sha256 matches published test vectors") {
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("short_id is 16 hex chars and separates parts") {
  const std::string a = short_id({"ab", "c"});
  CHECK(a.size() == 16);
  CHECK(a == short_id({"ab", "c"}));
  CHECK(a != short_id({"a", "bc"}));
  CHECK(a == sha256_hex(std::string_view("ab\x1f" "c")).substr(0, 16));
}

TEST_CASE("base64 round trip and RFC 4648 vectors") {
  const std::string plain = "foobar";
  const Bytes bytes(plain.begin(), plain.end());
  CHECK(base64_encode(bytes) == "Zm9vYmFy");
  CHECK(base64_encode(Bytes{'f'}) == "Zg==");
  CHECK(base64_encode(Bytes{'f', 'o'}) == "Zm8=");
  CHECK(base64_decode("Zm9vYmFy") == bytes);
  CHECK(base64_decode("Zg==") == Bytes{'f'});
  CHECK(base64_decode("") == Bytes{});
  CHECK_THROWS_AS(base64_decode("Zm9v*mFy"), Error);

  Bytes all(256);
  for (int i = 0; i < 256; ++i) all[i] = static_cast<std::uint8_t>(i);
  CHECK(base64_decode(base64_encode(all)) == all);
}

TEST_CASE("image sniffing") {
  const Bytes png = make_png(4, 3, 10, 20, 30);
  CHECK(sniff_image(png) == ImageFormat::png);
  const Bytes jpeg{0xFF, 0xD8, 0xFF, 0xE0, 0, 0};
  CHECK(sniff_image(jpeg) == ImageFormat::jpeg);
  CHECK_FALSE(sniff_image(Bytes{'h', 'i'}).has_value());
  CHECK(std::string(image_extension(ImageFormat::png)) == "png");
}

TEST_CASE("tagged PNGs are deterministic, distinct and carry their tag") {
  const Bytes a = tagged_png("<edit:1>");
  CHECK(a == tagged_png("<edit:1>"));
  CHECK(a != tagged_png("<edit:2>"));
  const std::string text(a.begin(), a.end());
  CHECK(text.find("<edit:1>") != std::string::npos);
  CHECK(sniff_image(a) == ImageFormat::png);
}
