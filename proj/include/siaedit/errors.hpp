#pragma once

#include <stdexcept>
#include <string>

namespace siaedit {

// Every error raised by the library carries a short category string; the CLI
// prints it as the first token of its one-line failure report.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define SIAEDIT_DEFINE_ERROR(Name, tag)                                 \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(tag, what) {}        \
  };

SIAEDIT_DEFINE_ERROR(DimensionError, "dimension")
SIAEDIT_DEFINE_ERROR(DomainError, "domain")
SIAEDIT_DEFINE_ERROR(NumericError, "numeric")
SIAEDIT_DEFINE_ERROR(ContractError, "contract")
SIAEDIT_DEFINE_ERROR(RangeError, "range")
SIAEDIT_DEFINE_ERROR(FormatError, "format")
SIAEDIT_DEFINE_ERROR(ValidationError, "validation")
SIAEDIT_DEFINE_ERROR(ParseError, "parse")
SIAEDIT_DEFINE_ERROR(EmptyInputError, "empty-input")
SIAEDIT_DEFINE_ERROR(IoError, "io")

#undef SIAEDIT_DEFINE_ERROR

}  // namespace siaedit
