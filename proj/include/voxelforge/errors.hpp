#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxelforge {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent input data; the CLI maps these to exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

// Failures that are not the caller's fault; exit code 3.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public DataError { using DataError::DataError; };
class SizeMismatch : public DataError { using DataError::DataError; };
class NyquistViolation : public DataError { using DataError::DataError; };
class EmptyInput : public DataError { using DataError::DataError; };
class NonFinite : public DataError { using DataError::DataError; };
class SizeOverflow : public DataError { using DataError::DataError; };
class EmptyCandidates : public DataError { using DataError::DataError; };
class NoEligibleVoxels : public DataError { using DataError::DataError; };
class PartitionMismatch : public DataError { using DataError::DataError; };
class MissingLayerFeatures : public DataError { using DataError::DataError; };

// Matrix container errors.
class BadMagic : public DataError { using DataError::DataError; };
class TruncatedPayload : public DataError { using DataError::DataError; };
class NonFiniteValue : public DataError { using DataError::DataError; };

// Bundle / manifest errors.
class SchemaMismatch : public DataError { using DataError::DataError; };
class MissingFile : public DataError { using DataError::DataError; };

// Constant series where a correlation is required.
class ZeroVariance : public DataError {
public:
    ZeroVariance(const std::string& what, std::ptrdiff_t voxel = -1)
        : DataError(what), voxel_(voxel) {}
    std::ptrdiff_t voxel() const noexcept { return voxel_; }

private:
    std::ptrdiff_t voxel_;
};

// Wraps a per-voxel failure with the voxel index.
class VoxelError : public DataError {
public:
    VoxelError(const std::string& what, std::ptrdiff_t voxel)
        : DataError("voxel " + std::to_string(voxel) + ": " + what), voxel_(voxel) {}
    std::ptrdiff_t voxel() const noexcept { return voxel_; }

private:
    std::ptrdiff_t voxel_;
};

}  // namespace voxelforge
