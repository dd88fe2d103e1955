#pragma once

// libtorch's logging header defines CHECK; doctest's assertion macros take over.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
