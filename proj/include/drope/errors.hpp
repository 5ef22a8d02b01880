#ifndef DROPE__ERRORS_HPP_
#define DROPE__ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace drope
{

// Vector or bank widths disagree with the active configuration.
class DimensionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

// A structurally valid request that the chosen variant or split cannot serve.
class ConfigurationError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

class NotImplementedError : public std::logic_error
{
public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace drope

#endif  // DROPE__ERRORS_HPP_
