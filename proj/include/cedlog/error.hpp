#pragma once

#include <stdexcept>
#include <string>

namespace cedlog {

// Base of every error the library throws. Subclasses map onto the HTTP
// status classes used by the service layer.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

// Resource is in a state that forbids the request (closed alert, busy retrain).
class Conflict : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cedlog
