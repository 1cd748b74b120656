#ifndef SGG_ERROR_HPP
#define SGG_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sgg
{

/// Base class for every error raised by the library.
class error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or ranks do not conform.
class dimension_error : public error
{
public:
    using error::error;
};

/// A value became NaN or infinite, or an evaluation produced one.
class numeric_error : public error
{
public:
    using error::error;
};

/// A sample, vocabulary or edge set violates its invariants.
class validation_error : public error
{
public:
    using error::error;
};

/// Required data (e.g. a feature vector) is missing.
class data_error : public error
{
public:
    using error::error;
};

/// Degenerate box geometry.
class geometry_error : public error
{
public:
    using error::error;
};

class config_error : public error
{
public:
    using error::error;
};

class io_error : public error
{
public:
    using error::error;
};

/// Malformed file content. Carries the 1-based line number when known (0 otherwise).
class parse_error : public error
{
public:
    parse_error(const std::string& msg, std::size_t line)
        : error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line)
    {
    }

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Training diverged or received unusable gradients.
class training_error : public numeric_error
{
public:
    using numeric_error::numeric_error;
};

} // namespace sgg
#endif // header guard
