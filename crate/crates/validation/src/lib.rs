//! Host package for the `acceptance` test target. It sits in its own package
//! so the long end-to-end suite runs after every other test binary.
