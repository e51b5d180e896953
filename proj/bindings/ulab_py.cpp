#include <pybind11/pybind11.h>
PYBIND11_MODULE(_ulab, m) { m.doc() = "ulab core bindings"; }
