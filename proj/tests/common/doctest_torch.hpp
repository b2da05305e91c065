#pragma once

// libtorch's logging header defines its own CHECK; doctest's must win.
#undef CHECK
#include <doctest.h>
