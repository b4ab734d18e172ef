#include "wmb/harness/format.hpp"

#include <charconv>
#include <stdexcept>

namespace wmb::harness {

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    if (res.ec != std::errc()) throw std::runtime_error("fmt_double: conversion failed");
    return std::string(buf, res.ptr);
}

}  // namespace wmb::harness
