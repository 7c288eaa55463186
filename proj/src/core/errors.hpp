// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace smoe {

// Every failure raised by the core derives from Error. The C API maps the
// category onto a status code, so new subclasses must pick one of these.
enum class ErrorKind {
    Shape,
    Config,
    Contract,
    Numeric,
    Io,
    Corrupt,
    Generation,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class CorruptCheckpointError : public Error {
public:
    explicit CorruptCheckpointError(const std::string& what) : Error(ErrorKind::Corrupt, what) {}
};

class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& what) : Error(ErrorKind::Generation, what) {}
};

}  // namespace smoe
