//! Named parameter groups.
//!
//! Every group is generic over its slot type: `Tensor` for stored weights,
//! [`Var`](crate::tape::Var) once bound onto a tape, or anything else the
//! optimizer needs to keep per parameter.

use alloc::format;
use alloc::string::String;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// Declares a parameter group struct with `map`, `visit` and `visit_mut`.
macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T = $crate::tensor::Tensor> {
            $($(#[$fmeta])* pub $field: T),+
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> $name<U> {
                $name { $($field: f(&$crate::params::join(prefix, stringify!($field)), &self.$field)),+ }
            }

            pub fn try_map<U, E>(
                &self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &T) -> core::result::Result<U, E>,
            ) -> core::result::Result<$name<U>, E> {
                Ok($name { $($field: f(&$crate::params::join(prefix, stringify!($field)), &self.$field)?),+ })
            }

            pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &T)) {
                $(f(&$crate::params::join(prefix, stringify!($field)), &self.$field);)+
            }

            pub fn slots(&self) -> alloc::vec::Vec<&T> {
                alloc::vec![$(&self.$field),+]
            }

            pub fn slots_mut(&mut self) -> alloc::vec::Vec<&mut T> {
                alloc::vec![$(&mut self.$field),+]
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
                $(f(&$crate::params::join(prefix, stringify!($field)), &mut self.$field);)+
            }
        }
    };
}

pub(crate) use param_group;
