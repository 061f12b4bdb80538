#include "phonicl/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>
#include <stdexcept>

#include "phonicl/error.hpp"

namespace phonicl {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ProfileNotFound: return "ProfileNotFound";
    case ErrorCode::RuleParseError: return "RuleParseError";
    case ErrorCode::VocabParseError: return "VocabParseError";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::TokenizerMismatch: return "TokenizerMismatch";
    case ErrorCode::MissingChannel: return "MissingChannel";
    case ErrorCode::OddKForSplitHalf: return "OddKForSplitHalf";
    case ErrorCode::MissingVectors: return "MissingVectors";
    case ErrorCode::SnapshotVersionMismatch: return "SnapshotVersionMismatch";
    case ErrorCode::SnapshotParseError: return "SnapshotParseError";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::TemplateParseError: return "TemplateParseError";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::EndpointError: return "EndpointError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::QueryMismatch: return "QueryMismatch";
    case ErrorCode::MissingGroup: return "MissingGroup";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::StageError: return "StageError";
  }
  return "Unknown";
}

}  // namespace phonicl
