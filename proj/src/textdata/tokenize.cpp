#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/ustring.h>
#include <unicode/unistr.h>

#include "t2i/errors.hpp"
#include "t2i/textdata.hpp"

namespace t2i {

namespace {

icu::UnicodeString decode_strict(std::string_view text) {
  if (text.size() > static_cast<std::size_t>(INT32_MAX)) throw EncodingError("text too long");
  UErrorCode status = U_ZERO_ERROR;
  int32_t needed = 0;
  // Pre-flight with a strict converter: fromUTF8 would silently substitute.
  u_strFromUTF8(nullptr, 0, &needed, text.data(), static_cast<int32_t>(text.size()), &status);
  if (status != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(status)) {
    throw EncodingError("invalid UTF-8 input");
  }
  icu::UnicodeString out;
  status = U_ZERO_ERROR;
  UChar* buffer = out.getBuffer(needed + 1);
  u_strFromUTF8(buffer, needed + 1, &needed, text.data(), static_cast<int32_t>(text.size()), &status);
  out.releaseBuffer(U_SUCCESS(status) ? needed : 0);
  if (U_FAILURE(status)) throw EncodingError("invalid UTF-8 input");
  return out;
}

icu::UnicodeString normalize(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw EncodingError("NFC normalizer unavailable");
  icu::UnicodeString out = norm->normalize(s, status);
  if (U_FAILURE(status)) throw EncodingError("NFC normalization failed");
  return out;
}

bool is_separator(UChar32 c) {
  if (c < 0x80 && (c <= 0x20 || (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
                   (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7F))) {
    return true;
  }
  if (c == 0x0964 || c == 0x0965) return true;
  return u_isUWhiteSpace(c) || u_ispunct(c);
}

}  // namespace

std::string nfc(std::string_view text) {
  std::string out;
  normalize(decode_strict(text)).toUTF8String(out);
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const icu::UnicodeString s = normalize(decode_strict(text));
  std::vector<std::string> tokens;
  icu::UnicodeString current;
  auto flush = [&] {
    if (!current.isEmpty()) {
      std::string utf8;
      current.toUTF8String(utf8);
      tokens.push_back(std::move(utf8));
      current.remove();
    }
  };
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (is_separator(c)) {
      flush();
      continue;
    }
    UErrorCode status = U_ZERO_ERROR;
    const bool latin = uscript_getScript(c, &status) == USCRIPT_LATIN && U_SUCCESS(status);
    current.append(latin ? u_tolower(c) : c);
  }
  flush();
  return tokens;
}

}  // namespace t2i
