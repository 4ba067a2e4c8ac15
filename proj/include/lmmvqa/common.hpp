#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lmmvqa {

// Base class for all pipeline errors. Subclasses mirror the failure
// contracts of the individual stages so callers can catch by type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// preprocess
class DecodeError : public Error { public: using Error::Error; };
class EmptyVideo : public Error { public: using Error::Error; };

// encoders
class ShapeError : public Error { public: using Error::Error; };
class BackendError : public Error { public: using Error::Error; };
class DuplicateBackend : public Error { public: using Error::Error; };
class UnknownBackend : public Error { public: using Error::Error; };

// prompting
class GrammarExhausted : public Error { public: using Error::Error; };
class TooFewSamples : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

// decoder
class TokenizeError : public Error { public: using Error::Error; };
class WidthMismatch : public Error { public: using Error::Error; };
class ParseError : public Error { public: using Error::Error; };

// training
class DivergenceError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class MissingTask : public Error { public: using Error::Error; };

// evaluation
class DegenerateInput : public Error { public: using Error::Error; };
class ManifestMissing : public Error { public: using Error::Error; };
class CheckpointMissing : public Error { public: using Error::Error; };

// cli
class MissingCache : public Error { public: using Error::Error; };

// 64-bit FNV-1a, used for weight fingerprints and seed derivation.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t state = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t state = 0xcbf29ce484222325ULL);

// Deterministic seed mixing (splitmix64 finalizer over the combined words).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt);

std::string to_hex(std::uint64_t value);

}  // namespace lmmvqa
