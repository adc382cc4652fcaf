extern "C" const char hpcrun_stub_mpi_variant[] = HPCRUN_STUB_VARIANT;

extern "C" int hpcrun_stub_mpi_marker() { return 0; }
