#pragma once

#include <stdexcept>
#include <string>

namespace eirm {

// Every library failure derives from Error so callers can catch one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ModeError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct PathError : Error { using Error::Error; };

}  // namespace eirm
