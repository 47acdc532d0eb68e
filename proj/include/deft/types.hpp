#pragma once

#include <Eigen/Dense>

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace deft {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;
using Vec3 = Eigen::Vector3d;

// Multichannel waveform: one row per channel.
using Wave = Eigen::MatrixXd;

inline constexpr int kSampleRate = 16000;
inline constexpr int kClipSamples = 64000;
inline constexpr int kNumMics = 4;
inline constexpr int kNumClasses = 13;
inline constexpr int kSilenceClass = 13;
inline constexpr int kNumClassesTotal = kNumClasses + 1;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Female speech", "Male speech", "Clapping",  "Telephone", "Laughter",
    "Domestic sounds", "Walk",      "Door",      "Music",     "Instrument",
    "Water tap",     "Bell",        "Knock"};

// Returns -1 for unknown names.
int class_id_from_name(std::string_view name);
std::string class_name(int class_id);

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct GeometryError : Error { using Error::Error; };
struct CatalogError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct UndefinedReferenceError : Error { using Error::Error; };
// Raised when a sampled scene cannot be mixed (e.g. all stems silent); the
// caller is expected to draw again.
struct SceneRejected : Error { using Error::Error; };

}  // namespace deft
