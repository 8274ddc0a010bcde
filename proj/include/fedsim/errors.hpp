#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input text; message carries the 1-based line number.
struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error("parse error at line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

// Invalid or inconsistent parameters, detected before any compute.
struct ConfigError : Error {
  using Error::Error;
};

// An iterate left the numerically sane region.
struct DivergenceError : Error {
  DivergenceError(int machine, long step, double norm)
      : Error("divergence on machine " + std::to_string(machine) + " at step " +
              std::to_string(step) + ": |u| = " + std::to_string(norm)),
        machine(machine), step(step), norm(norm) {}
  int machine;
  long step;
  double norm;
};

// A single-pass sampler ran out of unseen indices.
struct ExhaustedError : Error {
  using Error::Error;
};

}  // namespace fedsim
