#pragma once

// libtorch defines its own CHECK macro.
#undef CHECK
#include "doctest.h"
