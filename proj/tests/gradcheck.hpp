#pragma once

#include "adavit/gradcheck.hpp"
